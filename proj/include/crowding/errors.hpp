#pragma once

#include <stdexcept>
#include <string>

namespace crowding {

// Bad or inconsistent input data (files, datasets, removal requests).
class DataError : public std::runtime_error {
 public:
  enum class Kind {
    Io,
    Parse,
    NonFinite,
    LabelOutOfRange,
    DuplicatePair,
    UnannotatedInstance,
    RaggedFeatures,
    InvalidConfig,
    Infeasible,
  };

  DataError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Unknown keys, bad values or type errors in a key = value config.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or parameter.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace crowding
