#pragma once

#include <stdexcept>
#include <string>

namespace dpd {

// Tensor shape disagreement between an op's inputs, or a size that cannot be
// represented.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid network or block description (bad channel counts, stride, names).
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public SpecError {
 public:
  ParseError(int line, const std::string& key, const std::string& what)
      : SpecError(format(line, key, what)), line_(line), key_(key) {}

  int line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  static std::string format(int line, const std::string& key, const std::string& what) {
    std::string msg = "line " + std::to_string(line);
    if (!key.empty()) msg += " (" + key + ")";
    return msg + ": " + what;
  }

  int line_;
  std::string key_;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long step, const std::string& what)
      : std::runtime_error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace dpd
