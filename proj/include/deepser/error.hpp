#pragma once

#include <stdexcept>
#include <string>

namespace deepser {

/// Data or pipeline failure (bad file, infeasible split, diverged training).
/// Contract violations on arguments use std::invalid_argument instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace deepser
