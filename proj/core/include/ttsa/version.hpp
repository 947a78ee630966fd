#pragma once

namespace ttsa {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ttsa
