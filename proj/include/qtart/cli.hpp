#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace qtart {

/// Entry point of the `qtart` tool. Verbs: synth-gen, train, score, attack,
/// transfer, report. Returns 0 on success; failures print a single
/// "error: <verb>: <message>" line to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, char** argv);

}  // namespace qtart
