#pragma once

namespace guide {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace guide
