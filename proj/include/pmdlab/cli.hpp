#pragma once

namespace pmdlab {

// Entry point behind the pmdlab binary; exposed so tests can drive the CLI
// in-process.  Returns 0 on success, 1 on runtime failures (and failed bound
// checks), 2 on usage/configuration errors.
int cli_main(int argc, const char* const* argv);

}  // namespace pmdlab
