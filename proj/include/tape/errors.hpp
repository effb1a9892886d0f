#pragma once

#include <stdexcept>
#include <string>

namespace tape {

// Shape/size mismatches between tensors or against an op's contract.
struct dim_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse (backward on a consumed graph, missing grads, ...).
struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration values (unknown task kind, heads not dividing D, ...).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem / stream failures.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed serialized data (checkpoints, PPM files).
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tape
