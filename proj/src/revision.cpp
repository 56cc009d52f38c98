#include "clickseg/revision.hpp"

#ifndef CLICKSEG_GIT_REVISION
#define CLICKSEG_GIT_REVISION "unknown"
#endif

namespace clickseg {

std::string build_git_revision() { return CLICKSEG_GIT_REVISION; }

}  // namespace clickseg
