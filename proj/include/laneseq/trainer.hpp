#pragma once

#include <span>
#include <string>
#include <vector>

#include "laneseq/metrics.hpp"
#include "laneseq/model.hpp"
#include "laneseq/rewards.hpp"
#include "laneseq/synthdata.hpp"

namespace laneseq {

// Decoupled-weight-decay adaptive-moment optimizer over a ParameterStore's
// accumulated gradients.
struct OptimizerState {
  double lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<double> m;
  std::vector<double> v;

  void init(const ad::ParameterStore& params);
  void step(ad::ParameterStore& params);
};

struct TrainConfig {
  int batch_size = 4;
  int epochs_pretrain = 10;
  int epochs_mfrl = 10;
  double lr = 1e-4;
  double weight_decay = 0.01;
  RewardWeights rewards;
  double tau = kDefaultTau;
  uint64_t seed = 0;
  bool augment_enabled = false;
  AugmentConfig augment_cfg;
  double temperature = 1.0;       // exploration temperature for sampling
  bool symmetric_baseline = false;  // also use sample B as a gradient sample
  double mixed_ce_weight = 0.0;   // optional CE term during tuning, off by default
  double grad_clip_norm = 1.0;    // 0 disables clipping
  double lr_mfrl = -1.0;          // < 0: reuse lr for the tuning stage
};

// Two generations from one (image, format): A estimates the gradient, B is
// the baseline; the advantage A - B multiplies grad log Q(A).
struct BaselinePair {
  SampledSequence sample_a;
  SampledSequence sample_b;
  double reward_a = 0.0;
  double reward_b = 0.0;
  double advantage() const { return reward_a - reward_b; }
};

struct EpochStats {
  double loss_seg = 0.0;
  double loss_anchor = 0.0;
  double loss_param = 0.0;
};

struct ReinforceStats {
  double mean_reward_seg = 0.0;     // gradient-sample rewards
  double mean_reward_anchor = 0.0;
  double mean_reward_param = 0.0;
  double surrogate_seg = 0.0;       // mean backpropagated scalar per format
  double surrogate_anchor = 0.0;
  double surrogate_param = 0.0;
  double mean_abs_advantage = 0.0;
  long pairs = 0;
};

struct EvalFormatSummary {
  EvalReport report;
  double mean_reward = 0.0;
  double clean_parse_fraction = 0.0;  // greedy decodes with zero diagnostics
};

struct EvalSummary {
  EvalFormatSummary seg;
  EvalFormatSummary anchor;
  EvalFormatSummary param;
  double combined = 0.0;  // combined_objective over mean rewards

  double min_f1() const;
  double mean_f1() const;
};

// Reward of decoded predictions against one record's ground truth in the
// given format; lenient decoding failures yield the empty-prediction reward.
double format_reward(const DecodedScene& pred, const SceneRecord& gt,
                     SequenceFormat fmt, const RewardWeights& weights,
                     double tau);

// One pass over the training set with the weighted-likelihood objective:
// per batch, images are encoded once, the three per-format losses are summed,
// and one optimizer step is taken. Throws on non-finite loss.
EpochStats pretrain_epoch(std::span<const SceneRecord> train, SeqModel& model,
                          OptimizerState& opt, const TrainConfig& cfg,
                          int epoch);

// One REINFORCE batch: per image and format, draw a gradient/baseline sample
// pair, decode leniently, and accumulate (lambda_fmt * advantage) * grad log Q.
ReinforceStats reinforce_step(std::span<const SceneRecord> batch,
                              std::span<const size_t> global_indices,
                              SeqModel& model, OptimizerState& opt,
                              const TrainConfig& cfg, int epoch);

ReinforceStats reinforce_epoch(std::span<const SceneRecord> train,
                               SeqModel& model, OptimizerState& opt,
                               const TrainConfig& cfg, int epoch);

// Greedy-decodes every record in all three formats and aggregates F1 and
// mean rewards.
EvalSummary evaluate_model(const SeqModel& model,
                           std::span<const SceneRecord> records,
                           const TrainConfig& cfg);

enum class TrainStage { Pretrain, Mfrl, Both };

struct RunTrainingResult {
  std::string pretrain_ckpt;  // best stage-1 checkpoint path (when run)
  std::string mfrl_ckpt;      // best stage-2 checkpoint path (when run)
  std::string history_csv;
  EvalSummary final_eval;
};

inline constexpr const char* kHistoryHeader =
    "epoch,stage,format,loss,reward,precision,recall,f1";

// Two-stage pipeline: weighted-likelihood pretraining, then multi-format
// REINFORCE tuning. Writes history.csv and the best checkpoint per stage
// under out_dir. For TrainStage::Mfrl, init_ckpt must name a stage-1
// checkpoint.
RunTrainingResult run_training(const TrainConfig& cfg,
                               const ModelConfig& model_cfg,
                               const std::string& train_dir,
                               const std::string& val_dir,
                               const std::string& out_dir, TrainStage stage,
                               const std::string& init_ckpt = "");

}  // namespace laneseq
