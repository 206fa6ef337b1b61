#pragma once

namespace treegp {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace treegp
