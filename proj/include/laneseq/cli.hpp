#pragma once

namespace laneseq {

// Entry point for the laneseq command-line tool. Exit codes: 0 success,
// 1 usage error, 2 verification failure, 3 runtime error.
int run_cli(int argc, char** argv);

}  // namespace laneseq
