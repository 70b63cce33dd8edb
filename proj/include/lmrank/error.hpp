#pragma once

#include <stdexcept>
#include <string>

namespace lmrank {

/// Input violates a documented contract (bad file contents, mismatched
/// dimensions, duplicate ids, ...). Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure: missing file, short read, failed write. Exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lmrank
