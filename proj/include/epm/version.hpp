#pragma once

namespace epm {

inline constexpr const char* version = "0.1.0";

}  // namespace epm
