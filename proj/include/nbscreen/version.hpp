#pragma once

namespace nbscreen {

inline constexpr const char* kVersion = "0.1.0";

}
