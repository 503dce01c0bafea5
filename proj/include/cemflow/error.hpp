#pragma once

#include <stdexcept>
#include <string>

namespace cemflow {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments, configuration values or mesh-incompatible inputs.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed input files. Carries the file path and, if known, the line.
class ParseError : public Error {
 public:
  ParseError(std::string path, int line, const std::string& what)
      : Error(path + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
        path_(std::move(path)),
        line_(line) {}

  const std::string& path() const { return path_; }
  int line() const { return line_; }

 private:
  std::string path_;
  int line_;
};

/// Failures of the numerical kernels (singular systems, non-finite values).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cemflow
