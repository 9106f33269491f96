#pragma once

#include <iosfwd>
#include <string>

#include "mtfatt/config.hpp"

// Subcommand entry points, callable in-process by tests. Each returns a
// process exit code: 0 success, 1 runtime failure, 2 usage/config error.
namespace mtfatt {

struct StemChoice {
  bool synthetic = false;
  int stem = 0;  // kStemNames index
};

// "vocals" -> dataset stem; "synthetic" -> synthetic vocals;
// "synthetic-<stem>" -> synthetic with that target.
StemChoice parse_stem_choice(const std::string& name);

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_separate(const RunConfig& cfg, const std::string& input_wav,
                 const std::string& checkpoint, std::ostream& out, std::ostream& err);
int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_selftest(const RunConfig& cfg, bool inject_softmax_fault, std::ostream& out,
                 std::ostream& err);

}  // namespace mtfatt
