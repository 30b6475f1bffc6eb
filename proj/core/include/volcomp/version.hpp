#pragma once

#include <string>

namespace volcomp {

/// git-describe style identifier of the build, "unknown" outside a checkout.
std::string artifact_version();

}  // namespace volcomp
