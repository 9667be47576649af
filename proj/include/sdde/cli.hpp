#pragma once

#include <iosfwd>

namespace sdde {

// Exit status: 0 success, 1 usage or input error, 2 numerical failure.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sdde
