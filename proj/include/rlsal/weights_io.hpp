#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "rlsal/network.hpp"

namespace rlsal {

// Versioned plain-text checkpoint:
//
//   rlsal-weights 1
//   input <frames> <h> <w>
//   actions <n>
//   head dueling|single
//   trunk <count>
//   conv <out> <kernel> <stride> <padding> | relu | flatten | dense <out>   (one per line)
//   hidden <q|value|advantage> <count> <sizes...>
//   params <count>
//   tensor <path>.<weights|bias> <rank> <dims...>
//   <values on one line, shortest round-trip decimal>
//   end
//
// Floats are written with std::to_chars, so load(save(x)) is bit-exact.
inline constexpr int kWeightsFormatVersion = 1;

void write_weights(std::ostream& os, const NetworkSpec& spec, const Weights& weights);
std::string format_weights(const NetworkSpec& spec, const Weights& weights);

struct Checkpoint {
  NetworkSpec spec;
  Weights weights;
};

// Throws VersionMismatchError, ShapeMismatchError or MalformedDocumentError.
Checkpoint parse_weights(std::istream& is);
Checkpoint parse_weights(const std::string& text);

// File variants add the path to IoError messages.
void save_weights(const NetworkSpec& spec, const Weights& weights, const std::filesystem::path& path);
Checkpoint load_weights(const std::filesystem::path& path);

// Shortest decimal that parses back to the same double.
std::string format_double(double value);

}  // namespace rlsal
