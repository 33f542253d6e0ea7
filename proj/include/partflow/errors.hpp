#pragma once

#include <stdexcept>
#include <string>

namespace partflow {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Kinematic tree is malformed (cycle, dangling parent, non depth-1 where required).
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Semantic labelling is inconsistent (zero or several base parts).
class SemanticError : public Error {
 public:
  using Error::Error;
};

// A value invariant is broken (non-unit axis, non-finite entry).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Tensor / sequence dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Scalar argument outside its admissible range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Degenerate geometry or direction (zero-norm axis, empty part).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Input document does not follow the object / cache / checkpoint schema.
class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Non-finite loss during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Non-finite state during sampling.
class SamplerDivergence : public Error {
 public:
  using Error::Error;
};

}  // namespace partflow
