#pragma once

#include <stdexcept>
#include <string>

namespace rrnn {

// Operand extents do not fit the operation.
class shape_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A NaN or infinity appeared where finite values are required.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// An object was used in a state that does not allow the call.
class state_error : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A caller supplied argument is out of its documented range.
class validation_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Components were wired together inconsistently (layer chain, tying, ...).
class config_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace rrnn
