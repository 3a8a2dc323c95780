#pragma once

namespace graphnav {

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr int kFileFormatVersion = 1;

}  // namespace graphnav
