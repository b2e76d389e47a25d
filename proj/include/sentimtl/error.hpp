#pragma once

#include <stdexcept>
#include <string>

namespace sentimtl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (JSONL, XML, flag files, mock scripts).
class DataError : public Error {
public:
  using Error::Error;
};

/// Shape or index mismatch inside the differentiation engine.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// A value outside its documented domain (confidence > 1, negative weight, ...).
class RangeError : public Error {
public:
  using Error::Error;
};

/// Failure to reach or talk to an LLM backend. Retried by the augmentor.
class TransportError : public Error {
public:
  using Error::Error;
};

class CheckpointError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace sentimtl
