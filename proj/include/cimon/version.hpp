#pragma once

namespace cimon {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cimon
