#pragma once

#include <string>

namespace clickseg {

/// Revision of the source tree this binary was built from.
std::string build_git_revision();

}  // namespace clickseg
