#pragma once

#include <iosfwd>

namespace poiformer {

enum ExitCode : int {
    kExitOk = 0,
    kExitInput = 2,
    kExitNumeric = 3,
    kExitFormat = 4,
    kExitVerification = 5,
};

/// Entry point of the `poiformer` tool: prepare, synth, train, eval,
/// gradcheck and ablate. Results go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Keeps freed tensor buffers in the heap instead of handing them back to
/// the OS after every step. Call once from main; a no-op off glibc.
void tune_allocator();

}  // namespace poiformer
