#include "volcomp/version.hpp"

#ifndef VOLCOMP_ARTIFACT_VERSION
#define VOLCOMP_ARTIFACT_VERSION "unknown"
#endif

namespace volcomp {

std::string artifact_version() { return VOLCOMP_ARTIFACT_VERSION; }

}  // namespace volcomp
