#pragma once

#include <stdexcept>
#include <string>

namespace trajrec {

// Error taxonomy shared by all modules. The CLI maps input_error to exit
// code 1 and io_error/format_error to exit code 2.
struct input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct training_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace trajrec
