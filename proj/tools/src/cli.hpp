#pragma once

#include <iosfwd>

namespace rae {

// Exit codes of the `rae` tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2, kExitAcceptanceFail = 3 };

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rae
