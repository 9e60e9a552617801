#pragma once

namespace msmemu {

// Entry point behind the msm-emu binary. Returns the process exit code:
// 0 success, 2 configuration error, 3 data error, 4 numeric failure.
int cli_main(int argc, const char* const* argv);

}  // namespace msmemu
