// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

#include "akt/tensor.hpp"

namespace akt {

// Malformed or inconsistent input data (CLI exit code 2).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments (CLI exit code 1).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using num::NumericError;
using num::ShapeError;

}  // namespace akt
