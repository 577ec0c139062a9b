#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace metadet {

// Subcommands synth, mmd, train, eval, weights. Reports go to `out` as JSON
// and to `err` as aligned tables. Returns 0 on success, 1 on a usage error,
// 2 on a data, configuration or contract error.
int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace metadet
