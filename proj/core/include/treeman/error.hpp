#pragma once

#include <stdexcept>
#include <string>

namespace treeman {

// Every recoverable failure in the library surfaces as a treeman::Error whose
// message names the offending entity (admission, column, tensor shape, ...).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace treeman
