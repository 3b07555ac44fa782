// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tckit {

// Runtime failure inside the pipeline (bad data, numerical breakdown).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user input detected before any heavy work: bad flags, missing
// files, malformed configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace tckit
