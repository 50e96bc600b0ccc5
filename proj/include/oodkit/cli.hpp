#pragma once

#include <ostream>

namespace oodkit::cli {

/// Entry point of the `oodkit` tool. Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace oodkit::cli
