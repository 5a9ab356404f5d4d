#pragma once

#include <stdexcept>
#include <string>

namespace epm {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input record or argument violates a documented invariant.
struct validation_error : error {
    using error::error;
};

/// A model response that should have been exactly "0" or "1".
struct invalid_label_error : error {
    using error::error;
};

/// A judge response without any decimal number in it.
struct unparseable_score_error : error {
    using error::error;
};

/// Network failure talking to a chat backend (after retries).
struct transport_error : error {
    using error::error;
};

struct shape_error : error {
    using error::error;
};

}  // namespace epm
