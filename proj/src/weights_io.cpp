#include "rlsal/weights_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>
#include <vector>

#include "rlsal/errors.hpp"

namespace rlsal {

namespace {
constexpr const char* kMagic = "rlsal-weights";

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  os << "tensor " << name << ' ' << t.rank();
  for (auto d : t.shape()) os << ' ' << d;
  os << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) os << ' ';
    os << format_double(t[i]);
  }
  os << '\n';
}

void write_hidden(std::ostream& os, const char* name, const std::vector<std::size_t>& hidden) {
  os << "hidden " << name << ' ' << hidden.size();
  for (auto h : hidden) os << ' ' << h;
  os << '\n';
}

// Line-oriented reader that reports the line number on failure.
class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::vector<std::string> tokens(const char* expecting) {
    std::string line;
    if (!std::getline(is_, line))
      throw MalformedDocumentError("unexpected end of weight file, expecting " + std::string(expecting));
    ++line_no_;
    std::istringstream ls(line);
    std::vector<std::string> out;
    for (std::string tok; ls >> tok;) out.push_back(std::move(tok));
    if (out.empty()) throw error("empty line, expecting " + std::string(expecting));
    return out;
  }

  std::vector<std::string> keyword(const char* kw, std::size_t min_tokens) {
    auto t = tokens(kw);
    if (t[0] != kw || t.size() < min_tokens) throw error("expected '" + std::string(kw) + "' record");
    return t;
  }

  MalformedDocumentError error(const std::string& what) const {
    return MalformedDocumentError("weight file line " + std::to_string(line_no_) + ": " + what);
  }

  std::size_t to_size(const std::string& s) const {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw error("bad integer '" + s + "'");
    return v;
  }

  double to_double(const std::string& s) const {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw error("bad number '" + s + "'");
    return v;
  }

  std::size_t line() const { return line_no_; }

 private:
  std::istream& is_;
  std::size_t line_no_ = 0;
};

LayerSpec parse_layer(Reader& r) {
  auto t = r.tokens("trunk layer");
  if (t[0] == "conv" && t.size() == 5)
    return ConvLayer{r.to_size(t[1]), r.to_size(t[2]), r.to_size(t[3]), r.to_size(t[4])};
  if (t[0] == "dense" && t.size() == 2) return DenseLayer{r.to_size(t[1])};
  if (t[0] == "relu" && t.size() == 1) return ReluLayer{};
  if (t[0] == "flatten" && t.size() == 1) return FlattenLayer{};
  throw r.error("unknown trunk layer '" + t[0] + "'");
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, p);
}

void write_weights(std::ostream& os, const NetworkSpec& spec, const Weights& weights) {
  check_weights(spec, weights);
  os << kMagic << ' ' << kWeightsFormatVersion << '\n';
  os << "input " << spec.input_shape[0] << ' ' << spec.input_shape[1] << ' ' << spec.input_shape[2] << '\n';
  os << "actions " << spec.num_actions << '\n';
  os << "head " << (spec.head_kind == HeadKind::Dueling ? "dueling" : "single") << '\n';
  os << "trunk " << spec.trunk.size() << '\n';
  for (const auto& layer : spec.trunk) {
    if (const auto* c = std::get_if<ConvLayer>(&layer))
      os << "conv " << c->out_channels << ' ' << c->kernel << ' ' << c->stride << ' ' << c->padding << '\n';
    else if (const auto* d = std::get_if<DenseLayer>(&layer))
      os << "dense " << d->out_size << '\n';
    else if (std::holds_alternative<ReluLayer>(layer))
      os << "relu\n";
    else
      os << "flatten\n";
  }
  if (spec.head_kind == HeadKind::SingleQ) {
    write_hidden(os, "q", spec.q_hidden);
  } else {
    write_hidden(os, "value", spec.value_hidden);
    write_hidden(os, "advantage", spec.advantage_hidden);
  }
  const auto layout = parameter_layout(spec);
  os << "params " << 2 * layout.size() << '\n';
  for (const auto& [path, shape] : layout) {
    const auto& p = weights.at(path);
    write_tensor(os, path + ".weights", p.weights);
    write_tensor(os, path + ".bias", p.bias);
  }
  os << "end\n";
}

std::string format_weights(const NetworkSpec& spec, const Weights& weights) {
  std::ostringstream os;
  write_weights(os, spec, weights);
  return os.str();
}

Checkpoint parse_weights(std::istream& is) {
  Reader r(is);
  {
    auto t = r.tokens("header");
    if (t[0] != kMagic || t.size() != 2) throw r.error("not an rlsal weight file");
    const std::size_t version = r.to_size(t[1]);
    if (version != static_cast<std::size_t>(kWeightsFormatVersion))
      throw VersionMismatchError("weight file version " + t[1] + " is not supported (expected " +
                                 std::to_string(kWeightsFormatVersion) + ")");
  }
  Checkpoint ck;
  NetworkSpec& spec = ck.spec;
  {
    auto t = r.keyword("input", 4);
    if (t.size() != 4) throw r.error("input needs three dimensions");
    spec.input_shape = {r.to_size(t[1]), r.to_size(t[2]), r.to_size(t[3])};
  }
  spec.num_actions = r.to_size(r.keyword("actions", 2)[1]);
  {
    auto t = r.keyword("head", 2);
    if (t[1] == "dueling")
      spec.head_kind = HeadKind::Dueling;
    else if (t[1] == "single")
      spec.head_kind = HeadKind::SingleQ;
    else
      throw r.error("unknown head kind '" + t[1] + "'");
  }
  const std::size_t trunk_count = r.to_size(r.keyword("trunk", 2)[1]);
  for (std::size_t i = 0; i < trunk_count; ++i) spec.trunk.push_back(parse_layer(r));

  for (Head h : heads(spec)) {
    auto t = r.keyword("hidden", 3);
    if (t[1] != head_name(h)) throw r.error("expected hidden sizes for the " + std::string(head_name(h)) + " head");
    const std::size_t n = r.to_size(t[2]);
    if (t.size() != 3 + n) throw r.error("hidden size count does not match");
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0; i < n; ++i) sizes.push_back(r.to_size(t[3 + i]));
    (h == Head::Q ? spec.q_hidden : h == Head::Value ? spec.value_hidden : spec.advantage_hidden) =
        std::move(sizes);
  }
  try {
    validate(spec);
  } catch (const DimensionError& e) {
    throw ShapeMismatchError(std::string("inconsistent network description: ") + e.what());
  }

  const auto layout = parameter_layout(spec);
  const std::size_t count = r.to_size(r.keyword("params", 2)[1]);
  if (count != 2 * layout.size())
    throw ShapeMismatchError("weight file lists " + std::to_string(count) + " tensors, network needs " +
                             std::to_string(2 * layout.size()));
  for (const auto& [path, shape] : layout) {
    for (int part = 0; part < 2; ++part) {
      const std::string name = path + (part == 0 ? ".weights" : ".bias");
      const Shape& want = part == 0 ? shape.weights : shape.bias;
      auto t = r.keyword("tensor", 3);
      if (t[1] != name) throw r.error("expected tensor " + name + ", found " + t[1]);
      const std::size_t rank = r.to_size(t[2]);
      if (t.size() != 3 + rank) throw r.error("rank does not match dimension count for " + name);
      Shape dims;
      for (std::size_t i = 0; i < rank; ++i) dims.push_back(r.to_size(t[3 + i]));
      if (dims != want)
        throw ShapeMismatchError(name + " has shape " + to_string(dims) + ", network needs " + to_string(want));
      auto values = r.tokens("tensor values");
      if (values.size() != element_count(dims))
        throw ShapeMismatchError(name + " header declares " + std::to_string(element_count(dims)) +
                                 " values, found " + std::to_string(values.size()));
      std::vector<double> data;
      data.reserve(values.size());
      for (const auto& v : values) data.push_back(r.to_double(v));
      LayerParams& p = ck.weights.layers[path];
      (part == 0 ? p.weights : p.bias) = Tensor(dims, std::move(data));
    }
  }
  if (r.keyword("end", 1).size() != 1) throw r.error("trailing tokens after end");
  return ck;
}

Checkpoint parse_weights(const std::string& text) {
  std::istringstream is(text);
  return parse_weights(is);
}

void save_weights(const NetworkSpec& spec, const Weights& weights, const std::filesystem::path& path) {
  const std::string text = format_weights(spec, weights);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os.flush()) throw IoError("failed writing " + path.string());
}

Checkpoint load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string() + " for reading");
  try {
    return parse_weights(is);
  } catch (const VersionMismatchError& e) {
    throw VersionMismatchError(path.string() + ": " + e.what());
  } catch (const ShapeMismatchError& e) {
    throw ShapeMismatchError(path.string() + ": " + e.what());
  } catch (const MalformedDocumentError& e) {
    throw MalformedDocumentError(path.string() + ": " + e.what());
  }
}

}  // namespace rlsal
