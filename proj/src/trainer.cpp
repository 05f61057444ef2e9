#include "laneseq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "laneseq/threading.hpp"

namespace laneseq {

namespace fs = std::filesystem;
using ad::Graph;
using ad::Mat;
using ad::Value;

// --- optimizer -----------------------------------------------------------------

void OptimizerState::init(const ad::ParameterStore& params) {
  m.assign(params.total_elements(), 0.0);
  v.assign(params.total_elements(), 0.0);
  step_count = 0;
}

void OptimizerState::step(ad::ParameterStore& params) {
  if (m.size() != params.total_elements()) init(params);
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  size_t pos = 0;
  for (size_t t = 0; t < params.count(); ++t) {
    ad::Tensor& tensor = params.at(t);
    double* val = tensor.value().data.data();
    const double* grad = tensor.grad().data.data();
    for (size_t i = 0; i < tensor.value().size(); ++i, ++pos) {
      const double g = grad[i];
      m[pos] = beta1 * m[pos] + (1.0 - beta1) * g;
      v[pos] = beta2 * v[pos] + (1.0 - beta2) * g * g;
      const double mhat = m[pos] / bc1;
      const double vhat = v[pos] / bc2;
      val[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * val[i]);
    }
  }
}

// --- shared helpers ---------------------------------------------------------------

namespace {

constexpr uint64_t kStreamShuffle = 0xA1;
constexpr uint64_t kStreamAugment = 0xA2;
constexpr uint64_t kStreamSample = 0xA3;

const std::array<SequenceFormat, 3> kFormats{SequenceFormat::Segmentation,
                                             SequenceFormat::Anchor,
                                             SequenceFormat::Parameter};

std::vector<Lane> gt_lanes_for(const SceneRecord& rec, SequenceFormat fmt) {
  switch (fmt) {
    case SequenceFormat::Segmentation: return rec.polygons();
    case SequenceFormat::Anchor: return rec.polylines();
    default: return rec.param_lanes();
  }
}

void collect_graph_grads(const Graph& g, const ad::ParameterStore& params,
                         std::vector<double>& flat) {
  flat.assign(params.total_elements(), 0.0);
  size_t pos = 0;
  for (size_t t = 0; t < params.count(); ++t) {
    const ad::Tensor& tensor = params.at(t);
    if (const Mat* grad = g.param_grad(tensor))
      std::copy(grad->data.begin(), grad->data.end(), flat.begin() + pos);
    pos += tensor.value().size();
  }
}

void reduce_into_store(const std::vector<std::vector<double>>& per_example,
                       ad::ParameterStore& params) {
  // Fixed example order keeps the reduction bit-reproducible regardless of
  // thread scheduling or worker count.
  for (const auto& flat : per_example) {
    if (flat.empty()) continue;
    size_t pos = 0;
    for (size_t t = 0; t < params.count(); ++t) {
      ad::Tensor& tensor = params.at(t);
      double* g = tensor.grad().data.data();
      for (size_t i = 0; i < tensor.value().size(); ++i, ++pos)
        g[i] += flat[pos];
    }
  }
}

void clip_gradients(ad::ParameterStore& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (size_t t = 0; t < params.count(); ++t)
    for (double g : params.at(t).grad().data) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (size_t t = 0; t < params.count(); ++t)
    for (double& g : params.at(t).grad().data) g *= scale;
}

std::vector<size_t> shuffled_indices(size_t n, uint64_t seed, int epoch,
                                     uint64_t stream) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::stream(seed, {stream, static_cast<uint64_t>(epoch)});
  rng.shuffle(order);
  return order;
}

SceneRecord maybe_augment(const SceneRecord& rec, const TrainConfig& cfg,
                          int epoch, size_t index) {
  if (!cfg.augment_enabled) return rec;
  Rng rng = Rng::stream(cfg.seed, {kStreamAugment, static_cast<uint64_t>(epoch),
                                   static_cast<uint64_t>(index)});
  return augment(rec, rng, cfg.augment_cfg).record;
}

Image image_for_model(const SceneRecord& rec) { return rec.image; }

}  // namespace

double format_reward(const DecodedScene& pred, const SceneRecord& gt,
                     SequenceFormat fmt, const RewardWeights& weights,
                     double tau) {
  const ImageDims dims = gt.dims;
  switch (fmt) {
    case SequenceFormat::Segmentation: {
      std::vector<PolygonLane> preds;
      for (const Lane& l : pred.lanes)
        if (const auto* p = std::get_if<PolygonLane>(&l)) preds.push_back(*p);
      return reward_segmentation(preds, gt.gt_polygons(), dims, weights, tau)
          .total;
    }
    case SequenceFormat::Anchor: {
      std::vector<PolylineLane> preds;
      for (const Lane& l : pred.lanes)
        if (const auto* p = std::get_if<PolylineLane>(&l)) preds.push_back(*p);
      return reward_anchor(preds, gt.gt_polylines(), dims, weights, tau).total;
    }
    default: {
      std::vector<PolyLane> preds;
      for (const Lane& l : pred.lanes)
        if (const auto* p = std::get_if<PolyLane>(&l)) preds.push_back(*p);
      return reward_parameter(preds, gt.gt_params(), dims, weights, tau).total;
    }
  }
}

// --- pretraining ------------------------------------------------------------------

EpochStats pretrain_epoch(std::span<const SceneRecord> train, SeqModel& model,
                          OptimizerState& opt, const TrainConfig& cfg,
                          int epoch) {
  if (train.empty()) return {};
  const Vocabulary& vocab = model.vocab();
  const auto order =
      shuffled_indices(train.size(), cfg.seed, epoch, kStreamShuffle);

  EpochStats stats;
  long examples = 0;
  for (size_t start = 0; start < order.size();
       start += static_cast<size_t>(cfg.batch_size)) {
    const size_t count =
        std::min(static_cast<size_t>(cfg.batch_size), order.size() - start);
    std::vector<std::vector<double>> grads(count);
    std::vector<std::array<double, 3>> losses(count);

    parallel_for(static_cast<int>(count), [&](int bi) {
      const size_t gidx = order[start + static_cast<size_t>(bi)];
      const SceneRecord rec =
          maybe_augment(train[gidx], cfg, epoch, gidx);
      Graph g;
      const Value enc = model.build_encoder(g, image_for_model(rec));
      Value total{};
      bool have_total = false;
      for (size_t f = 0; f < kFormats.size(); ++f) {
        const SequenceFormat fmt = kFormats[f];
        const TokenSequence seq =
            encode_scene(gt_lanes_for(rec, fmt), fmt, rec.dims, vocab);
        const SequenceExample ex = training_pair(seq, vocab);
        const Value loss = model.build_sequence_loss(g, enc, ex);
        losses[static_cast<size_t>(bi)][f] = g.value(loss).at(0, 0);
        total = have_total ? g.add(total, loss) : loss;
        have_total = true;
      }
      const Value scaled = g.scale(total, 1.0 / static_cast<double>(count));
      g.backward(scaled);
      collect_graph_grads(g, model.params(), grads[static_cast<size_t>(bi)]);
    });

    for (size_t bi = 0; bi < count; ++bi) {
      const auto& l = losses[bi];
      if (!std::isfinite(l[0]) || !std::isfinite(l[1]) || !std::isfinite(l[2]))
        throw std::runtime_error(
            "pretrain_epoch: non-finite loss at epoch " +
            std::to_string(epoch) + ", example " +
            std::to_string(order[start + bi]));
      stats.loss_seg += l[0];
      stats.loss_anchor += l[1];
      stats.loss_param += l[2];
      ++examples;
    }

    model.params().zero_grads();
    reduce_into_store(grads, model.params());
    clip_gradients(model.params(), cfg.grad_clip_norm);
    opt.step(model.params());
    model.params().zero_grads();
  }

  if (examples > 0) {
    stats.loss_seg /= static_cast<double>(examples);
    stats.loss_anchor /= static_cast<double>(examples);
    stats.loss_param /= static_cast<double>(examples);
  }
  return stats;
}

// --- REINFORCE tuning ----------------------------------------------------------------

namespace {

double format_lambda(const RewardWeights& w, SequenceFormat fmt) {
  switch (fmt) {
    case SequenceFormat::Segmentation: return w.lambda4;
    case SequenceFormat::Anchor: return w.lambda5;
    default: return w.lambda6;
  }
}

DecodedScene lenient_decode(const std::vector<int>& tokens, ImageDims dims,
                            const Vocabulary& vocab) {
  try {
    return decode_scene(tokens, dims, vocab);
  } catch (const std::exception&) {
    return DecodedScene{};
  }
}

struct ExampleOutcome {
  std::vector<double> grads;                 // empty when no gradient
  std::array<double, 3> reward_a{0, 0, 0};   // gradient-sample rewards
  std::array<double, 3> surrogate{0, 0, 0};  // per-format backprop scalars
  std::array<double, 3> abs_advantage{0, 0, 0};
  std::array<bool, 3> active{false, false, false};
};

}  // namespace

ReinforceStats reinforce_step(std::span<const SceneRecord> batch,
                              std::span<const size_t> global_indices,
                              SeqModel& model, OptimizerState& opt,
                              const TrainConfig& cfg, int epoch) {
  if (batch.size() != global_indices.size())
    throw std::invalid_argument("reinforce_step: index span mismatch");
  const Vocabulary& vocab = model.vocab();
  const size_t count = batch.size();
  std::vector<ExampleOutcome> outcomes(count);

  parallel_for(static_cast<int>(count), [&](int bi) {
    const SceneRecord& rec = batch[static_cast<size_t>(bi)];
    const size_t gidx = global_indices[static_cast<size_t>(bi)];
    ExampleOutcome& out = outcomes[static_cast<size_t>(bi)];

    const EncodedImage enc_inf = model.encode_image(image_for_model(rec));
    Graph g;
    Value enc_g{};
    bool have_enc = false;
    Value total{};
    bool have_total = false;

    for (size_t f = 0; f < kFormats.size(); ++f) {
      const SequenceFormat fmt = kFormats[f];
      const double lambda = format_lambda(cfg.rewards, fmt);
      if (lambda == 0.0) continue;
      out.active[f] = true;

      BaselinePair pair;
      Rng rng_a = Rng::stream(
          cfg.seed, {kStreamSample, static_cast<uint64_t>(epoch),
                     static_cast<uint64_t>(gidx), static_cast<uint64_t>(f), 0});
      Rng rng_b = Rng::stream(
          cfg.seed, {kStreamSample, static_cast<uint64_t>(epoch),
                     static_cast<uint64_t>(gidx), static_cast<uint64_t>(f), 1});
      pair.sample_a =
          model.sample_sequence(enc_inf, fmt, cfg.temperature, rng_a);
      pair.sample_b =
          model.sample_sequence(enc_inf, fmt, cfg.temperature, rng_b);
      pair.reward_a = format_reward(
          lenient_decode(pair.sample_a.tokens.tokens, rec.dims, vocab), rec,
          fmt, cfg.rewards, cfg.tau);
      pair.reward_b = format_reward(
          lenient_decode(pair.sample_b.tokens.tokens, rec.dims, vocab), rec,
          fmt, cfg.rewards, cfg.tau);
      out.reward_a[f] = pair.reward_a;
      const double advantage = pair.advantage();
      out.abs_advantage[f] = std::fabs(advantage);

      // Zero advantage contributes no gradient; skip the decoder pass.
      const double unit = 1.0 / static_cast<double>(count);
      if (advantage != 0.0 && pair.sample_a.tokens.tokens.size() >= 3) {
        if (!have_enc) {
          enc_g = model.build_encoder(g, image_for_model(rec));
          have_enc = true;
        }
        // Minimizing lambda * advantage * (-log Q) ascends the objective.
        const Value nll =
            model.build_logprob_loss(g, enc_g, pair.sample_a.tokens.tokens);
        const Value term = g.scale(nll, lambda * advantage * unit);
        out.surrogate[f] += g.value(term).at(0, 0);
        total = have_total ? g.add(total, term) : term;
        have_total = true;
      }
      if (cfg.symmetric_baseline && advantage != 0.0 &&
          pair.sample_b.tokens.tokens.size() >= 3) {
        if (!have_enc) {
          enc_g = model.build_encoder(g, image_for_model(rec));
          have_enc = true;
        }
        const Value nll =
            model.build_logprob_loss(g, enc_g, pair.sample_b.tokens.tokens);
        const Value term = g.scale(nll, lambda * -advantage * unit);
        out.surrogate[f] += g.value(term).at(0, 0);
        total = have_total ? g.add(total, term) : term;
        have_total = true;
      }
      if (cfg.mixed_ce_weight > 0.0) {
        if (!have_enc) {
          enc_g = model.build_encoder(g, image_for_model(rec));
          have_enc = true;
        }
        const TokenSequence seq =
            encode_scene(gt_lanes_for(rec, fmt), fmt, rec.dims, vocab);
        const Value ce = model.build_sequence_loss(g, enc_g,
                                                   training_pair(seq, vocab));
        const Value term = g.scale(ce, cfg.mixed_ce_weight * unit);
        total = have_total ? g.add(total, term) : term;
        have_total = true;
      }
    }

    if (have_total) {
      if (!std::isfinite(g.value(total).at(0, 0)))
        throw std::runtime_error("reinforce_step: non-finite surrogate at "
                                 "example " + std::to_string(gidx));
      g.backward(total);
      collect_graph_grads(g, model.params(), out.grads);
    }
  });

  model.params().zero_grads();
  {
    std::vector<std::vector<double>> grads;
    grads.reserve(count);
    for (auto& o : outcomes) grads.push_back(std::move(o.grads));
    reduce_into_store(grads, model.params());
  }
  clip_gradients(model.params(), cfg.grad_clip_norm);
  opt.step(model.params());
  model.params().zero_grads();

  ReinforceStats stats;
  std::array<long, 3> active_counts{0, 0, 0};
  for (const ExampleOutcome& o : outcomes) {
    for (size_t f = 0; f < 3; ++f) {
      if (!o.active[f]) continue;
      ++active_counts[f];
      stats.mean_abs_advantage += o.abs_advantage[f];
      ++stats.pairs;
    }
  }
  const auto mean_of = [&](size_t f, auto member) {
    double acc = 0.0;
    for (const ExampleOutcome& o : outcomes)
      if (o.active[f]) acc += member(o, f);
    return active_counts[f] > 0 ? acc / static_cast<double>(active_counts[f])
                                : 0.0;
  };
  const auto reward_member = [](const ExampleOutcome& o, size_t f) {
    return o.reward_a[f];
  };
  const auto surrogate_member = [](const ExampleOutcome& o, size_t f) {
    return o.surrogate[f];
  };
  stats.mean_reward_seg = mean_of(0, reward_member);
  stats.mean_reward_anchor = mean_of(1, reward_member);
  stats.mean_reward_param = mean_of(2, reward_member);
  stats.surrogate_seg = mean_of(0, surrogate_member);
  stats.surrogate_anchor = mean_of(1, surrogate_member);
  stats.surrogate_param = mean_of(2, surrogate_member);
  if (stats.pairs > 0)
    stats.mean_abs_advantage /= static_cast<double>(stats.pairs);
  return stats;
}

ReinforceStats reinforce_epoch(std::span<const SceneRecord> train,
                               SeqModel& model, OptimizerState& opt,
                               const TrainConfig& cfg, int epoch) {
  if (train.empty()) return {};
  const auto order =
      shuffled_indices(train.size(), cfg.seed, epoch, kStreamShuffle);
  ReinforceStats acc;
  long batches = 0;
  for (size_t start = 0; start < order.size();
       start += static_cast<size_t>(cfg.batch_size)) {
    const size_t count =
        std::min(static_cast<size_t>(cfg.batch_size), order.size() - start);
    std::vector<SceneRecord> batch;
    std::vector<size_t> indices;
    batch.reserve(count);
    indices.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      batch.push_back(train[order[start + i]]);
      indices.push_back(order[start + i]);
    }
    const ReinforceStats s =
        reinforce_step(batch, indices, model, opt, cfg, epoch);
    acc.mean_reward_seg += s.mean_reward_seg;
    acc.mean_reward_anchor += s.mean_reward_anchor;
    acc.mean_reward_param += s.mean_reward_param;
    acc.surrogate_seg += s.surrogate_seg;
    acc.surrogate_anchor += s.surrogate_anchor;
    acc.surrogate_param += s.surrogate_param;
    acc.mean_abs_advantage += s.mean_abs_advantage;
    acc.pairs += s.pairs;
    ++batches;
  }
  if (batches > 0) {
    const double b = static_cast<double>(batches);
    acc.mean_reward_seg /= b;
    acc.mean_reward_anchor /= b;
    acc.mean_reward_param /= b;
    acc.surrogate_seg /= b;
    acc.surrogate_anchor /= b;
    acc.surrogate_param /= b;
    acc.mean_abs_advantage /= b;
  }
  return acc;
}

// --- evaluation ------------------------------------------------------------------------

double EvalSummary::min_f1() const {
  return std::min({seg.report.f1, anchor.report.f1, param.report.f1});
}

double EvalSummary::mean_f1() const {
  return (seg.report.f1 + anchor.report.f1 + param.report.f1) / 3.0;
}

EvalSummary evaluate_model(const SeqModel& model,
                           std::span<const SceneRecord> records,
                           const TrainConfig& cfg) {
  const Vocabulary& vocab = model.vocab();
  struct PerRecord {
    std::array<long, 3> tp{0, 0, 0}, fp{0, 0, 0}, fn{0, 0, 0};
    std::array<double, 3> reward{0, 0, 0};
    std::array<bool, 3> clean{false, false, false};
  };
  std::vector<PerRecord> rows(records.size());

  parallel_for(static_cast<int>(records.size()), [&](int i) {
    const SceneRecord& rec = records[static_cast<size_t>(i)];
    PerRecord& row = rows[static_cast<size_t>(i)];
    const EncodedImage enc = model.encode_image(image_for_model(rec));
    for (size_t f = 0; f < kFormats.size(); ++f) {
      const SequenceFormat fmt = kFormats[f];
      const TokenSequence seq = model.greedy_decode(enc, fmt);
      const DecodedScene dec = lenient_decode(seq.tokens, rec.dims, vocab);
      row.clean[f] = dec.diagnostics.empty();
      const std::vector<Lane> gts = gt_lanes_for(rec, fmt);
      const MatchResult match = match_lanes(dec.lanes, gts, rec.dims, cfg.tau);
      row.tp[f] = match.tp();
      row.fp[f] = static_cast<long>(match.fp_indices.size());
      row.fn[f] = static_cast<long>(match.fn_indices.size());
      row.reward[f] = format_reward(dec, rec, fmt, cfg.rewards, cfg.tau);
    }
  });

  EvalSummary out;
  std::array<EvalFormatSummary*, 3> slots{&out.seg, &out.anchor, &out.param};
  for (size_t f = 0; f < 3; ++f) {
    long tp = 0, fp = 0, fn = 0, clean = 0;
    double reward = 0.0;
    for (const PerRecord& row : rows) {
      tp += row.tp[f];
      fp += row.fp[f];
      fn += row.fn[f];
      clean += row.clean[f];
      reward += row.reward[f];
    }
    slots[f]->report = f1_from_counts(tp, fp, fn);
    slots[f]->mean_reward =
        records.empty() ? 0.0 : reward / static_cast<double>(records.size());
    slots[f]->clean_parse_fraction =
        records.empty() ? 0.0
                        : static_cast<double>(clean) /
                              static_cast<double>(records.size());
  }
  out.combined =
      combined_objective(out.seg.mean_reward, out.anchor.mean_reward,
                         out.param.mean_reward, cfg.rewards);
  return out;
}

// --- two-stage pipeline -------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void append_history(std::ofstream& csv, int epoch, const char* stage,
                    const EvalSummary& eval,
                    const std::array<double, 3>& losses) {
  const std::array<const EvalFormatSummary*, 3> slots{&eval.seg, &eval.anchor,
                                                      &eval.param};
  const std::array<const char*, 3> names{"seg", "anchor", "param"};
  for (size_t f = 0; f < 3; ++f) {
    csv << epoch << ',' << stage << ',' << names[f] << ','
        << fmt_double(losses[f]) << ',' << fmt_double(slots[f]->mean_reward)
        << ',' << fmt_double(slots[f]->report.precision) << ','
        << fmt_double(slots[f]->report.recall) << ','
        << fmt_double(slots[f]->report.f1) << '\n';
  }
  csv.flush();
}

}  // namespace

RunTrainingResult run_training(const TrainConfig& cfg,
                               const ModelConfig& model_cfg,
                               const std::string& train_dir,
                               const std::string& val_dir,
                               const std::string& out_dir, TrainStage stage,
                               const std::string& init_ckpt) {
  const std::vector<SceneRecord> train = read_dataset(train_dir);
  const std::vector<SceneRecord> val = read_dataset(val_dir);
  if (train.empty()) throw std::runtime_error("run_training: empty dataset");
  fs::create_directories(out_dir);

  RunTrainingResult result;
  result.history_csv = (fs::path(out_dir) / "history.csv").string();
  std::ofstream csv(result.history_csv);
  if (!csv)
    throw std::runtime_error("run_training: cannot open " + result.history_csv);
  csv << kHistoryHeader << '\n';

  SeqModel model = [&]() {
    if (stage == TrainStage::Mfrl) {
      if (init_ckpt.empty())
        throw std::runtime_error(
            "run_training: the tuning stage requires a pretraining-stage "
            "checkpoint (two-stage pipeline); pass one explicitly");
      return SeqModel::load(init_ckpt);
    }
    return SeqModel(model_cfg, cfg.seed);
  }();

  if (stage == TrainStage::Pretrain || stage == TrainStage::Both) {
    result.pretrain_ckpt = (fs::path(out_dir) / "pretrain_best.ckpt").string();
    OptimizerState opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    opt.init(model.params());
    double best_metric = -1e300;
    for (int epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
      const EpochStats stats = pretrain_epoch(train, model, opt, cfg, epoch);
      const EvalSummary eval = evaluate_model(model, val, cfg);
      append_history(csv, epoch, "pretrain", eval,
                     {stats.loss_seg, stats.loss_anchor, stats.loss_param});
      if (eval.mean_f1() > best_metric) {
        best_metric = eval.mean_f1();
        model.save(result.pretrain_ckpt);
        result.final_eval = eval;
      }
    }
    if (cfg.epochs_pretrain == 0) model.save(result.pretrain_ckpt);
  }

  if (stage == TrainStage::Mfrl || stage == TrainStage::Both) {
    if (stage == TrainStage::Both)
      model = SeqModel::load(result.pretrain_ckpt);
    result.mfrl_ckpt = (fs::path(out_dir) / "mfrl_best.ckpt").string();
    OptimizerState opt;
    opt.lr = cfg.lr_mfrl >= 0.0 ? cfg.lr_mfrl : cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    opt.init(model.params());
    double best_metric = -1e300;
    for (int epoch = 0; epoch < cfg.epochs_mfrl; ++epoch) {
      const ReinforceStats stats =
          reinforce_epoch(train, model, opt, cfg, epoch);
      const EvalSummary eval = evaluate_model(model, val, cfg);
      append_history(
          csv, epoch, "mfrl", eval,
          {stats.surrogate_seg, stats.surrogate_anchor, stats.surrogate_param});
      if (eval.combined > best_metric) {
        best_metric = eval.combined;
        model.save(result.mfrl_ckpt);
        result.final_eval = eval;
      }
    }
    if (cfg.epochs_mfrl == 0) model.save(result.mfrl_ckpt);
  }
  return result;
}

}  // namespace laneseq
