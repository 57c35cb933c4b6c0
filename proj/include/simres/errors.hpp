#pragma once

#include <stdexcept>
#include <string>

namespace simres {

// Shape, range or finiteness violation inside a numeric op.
class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable input data (manifests, images, labels).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failure while reading or writing artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid run configuration document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace simres
