#pragma once

#include <stdexcept>
#include <string>

namespace rlsal {

// Shapes of two operands do not agree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// A Value/Advantage target was requested on a network without those streams.
struct UnsupportedTargetError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A layer index points at the wrong kind of layer (e.g. Grad-CAM on a dense layer).
struct LayerKindError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EpisodeFinishedError : std::logic_error {
  using std::logic_error::logic_error;
};

struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Weight-file parse failures. The three subclasses are distinct so callers
// can tell a stale file from a corrupt one.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionMismatchError : ParseError {
  using ParseError::ParseError;
};
struct ShapeMismatchError : ParseError {
  using ParseError::ParseError;
};
struct MalformedDocumentError : ParseError {
  using ParseError::ParseError;
};

}  // namespace rlsal
