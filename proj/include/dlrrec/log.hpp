#pragma once

namespace dlrrec {

// Routes spdlog to stderr. Level comes from DLRREC_LOG (error, warn, info,
// debug); defaults to info.
void init_logging();

}  // namespace dlrrec
