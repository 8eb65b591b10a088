#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace crowdlab::cli {

// Operator surface: gen | split | filter | train | adapt | eval | report.
// `args` are the argv tokens after the program name. Human-readable output
// goes to `out`, diagnostics to `err`. Returns the process exit status: 0
// only when every requested artifact was written. Relative paths resolve
// against the CROWDLAB_ROOT environment variable when it is set.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace crowdlab::cli
