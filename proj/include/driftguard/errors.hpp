#pragma once

#include <stdexcept>
#include <string>

namespace driftguard {

struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InvalidTopology : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InvalidState : std::logic_error {
    using std::logic_error::logic_error;
};

// Operator feedback that cannot be applied (bad box, non-permutation ranking).
struct InvalidFeedback : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct RangeError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace driftguard
