#pragma once

#include <iosfwd>

namespace cfx::cli {

/// Entry point of the `cfx` tool. Subcommands: fit, effects, compress,
/// policy-eval, blb, bench. Returns 0 on success, else the error category's
/// exit code (1 config, 2 data, 3 numeric) after writing
/// {"code", "message", "context"} JSON to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cfx::cli
