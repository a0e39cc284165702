#pragma once

#ifndef CDPM_VERSION_STRING
#define CDPM_VERSION_STRING "0.1.0"
#endif

namespace cdpm {
inline constexpr const char* kVersion = CDPM_VERSION_STRING;
}
