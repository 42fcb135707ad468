#pragma once

#include <stdexcept>
#include <string>

namespace edg {

// Exception hierarchy. The CLI maps these onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (CoNLL, embeddings, exchange files). Carries the
// 1-based line number when one is known, 0 otherwise.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

// Predictions and gold data disagree on sentence ids or lengths.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// A strategy needs something the predictor does not provide.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ExternalPredictorError : public Error {
 public:
  using Error::Error;
};

}  // namespace edg
