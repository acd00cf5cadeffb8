#pragma once

#include <stdexcept>
#include <string>

namespace sfr {

// Precondition violations throw std::invalid_argument. The two classes below
// separate bad input data (files, manifests) from numerical breakdowns so the
// CLI can map them onto distinct exit codes.

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sfr
