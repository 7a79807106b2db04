#pragma once

namespace arv {

// Entry point behind the `arv` binary. Exit codes: 0 success, 1 usage or
// configuration error, 2 runtime/numeric error.
int cli_run(int argc, const char* const* argv);

}  // namespace arv
