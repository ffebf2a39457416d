// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace icefm {

/// Invalid configuration or argument; the message names the offending field.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// On-disk data that does not match its documented container format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A strategy was applied to an architecture that cannot host it.
class UnsupportedArchitecture : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Optimization could not continue (empty stream, non-finite loss).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace icefm
