#pragma once

namespace dialcomp {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dialcomp
