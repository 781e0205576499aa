#pragma once

namespace nerfedit::cli {

/// Entry point of the nerfedit tool. Returns 0 on success, 2 on usage errors
/// and 1 on runtime failures.
int run(int argc, const char* const* argv);

}  // namespace nerfedit::cli
