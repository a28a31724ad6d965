#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rdet::cli {

// Exit codes: 0 success, 2 usage error, 3 parse error, 4 numeric/domain error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rdet::cli
