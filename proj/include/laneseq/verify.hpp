#pragma once

#include <string>
#include <vector>

namespace laneseq {

// One verification check: a named property with its measured value and the
// bound it must satisfy.
struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double bound = 0.0;
  std::string detail;  // e.g. "<= bound" / ">= bound" and context
};

// Codec oracles: quantizer round-trips over three extents, monotonicity,
// sequence-length formulas, full-scene encode/decode round-trips.
std::vector<CheckResult> verify_codec();

// Metric oracles: greedy-vs-exhaustive matching on random scenes, Line-IoU /
// mask-IoU identities and bounds, point-accuracy thresholds.
std::vector<CheckResult> verify_metrics();

// Reward properties: decomposability, FP monotonicity, bounds, and the
// combined-objective values at the default weights.
std::vector<CheckResult> verify_rewards();

// Finite-difference gradient check of the full model on a toy configuration
// (embed 16, 1 layer each side, 26 vocabulary rows, 64-bit).
std::vector<CheckResult> verify_gradcheck();

// Policy-gradient estimator oracle on an enumerable toy policy (4 tokens,
// length <= 3): the two-sample-baseline estimate over `pairs` draws must
// match the exact enumerated gradient within 3 standard errors per
// coordinate, and its empirical variance must beat the no-baseline variant.
std::vector<CheckResult> verify_reinforce(long pairs = 50000);

bool all_passed(const std::vector<CheckResult>& results);
void print_results(const std::vector<CheckResult>& results);

}  // namespace laneseq
