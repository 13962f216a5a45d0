#pragma once

#include <iosfwd>

namespace lsa {

/// Runs one subcommand. Returns 0 on success, 1 on usage errors and 2 on
/// data or format errors.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace lsa
