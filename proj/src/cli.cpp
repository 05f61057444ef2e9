#include "laneseq/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "laneseq/codec.hpp"
#include "laneseq/metrics.hpp"
#include "laneseq/model.hpp"
#include "laneseq/synthdata.hpp"
#include "laneseq/threading.hpp"
#include "laneseq/trainer.hpp"
#include "laneseq/verify.hpp"

namespace laneseq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerification = 2;
constexpr int kExitRuntime = 3;

// --- config file <-> structs -----------------------------------------------------

json scene_to_json(const SceneSpec& s) {
  return json{{"seed", s.seed},
              {"width", s.dims.width},
              {"height", s.dims.height},
              {"min_lanes", s.min_lanes},
              {"max_lanes", s.max_lanes},
              {"curvature", s.curvature},
              {"lane_width", s.lane_width},
              {"noise", s.noise},
              {"background", s.background}};
}

SceneSpec scene_from_json(const json& j, SceneSpec s = {}) {
  s.seed = j.value("seed", s.seed);
  s.dims.width = j.value("width", s.dims.width);
  s.dims.height = j.value("height", s.dims.height);
  s.min_lanes = j.value("min_lanes", s.min_lanes);
  s.max_lanes = j.value("max_lanes", s.max_lanes);
  s.curvature = j.value("curvature", s.curvature);
  s.lane_width = j.value("lane_width", s.lane_width);
  s.noise = j.value("noise", s.noise);
  s.background = j.value("background", s.background);
  return s;
}

json train_to_json(const TrainConfig& t) {
  return json{{"batch_size", t.batch_size},
              {"epochs_pretrain", t.epochs_pretrain},
              {"epochs_mfrl", t.epochs_mfrl},
              {"lr", t.lr},
              {"weight_decay", t.weight_decay},
              {"tau", t.tau},
              {"seed", t.seed},
              {"augment", t.augment_enabled},
              {"temperature", t.temperature},
              {"symmetric_baseline", t.symmetric_baseline},
              {"mixed_ce_weight", t.mixed_ce_weight},
              {"grad_clip_norm", t.grad_clip_norm},
              {"lr_mfrl", t.lr_mfrl},
              {"rewards",
               {{"lambda1", t.rewards.lambda1},
                {"lambda2", t.rewards.lambda2},
                {"lambda3", t.rewards.lambda3},
                {"lambda4", t.rewards.lambda4},
                {"lambda5", t.rewards.lambda5},
                {"lambda6", t.rewards.lambda6}}}};
}

TrainConfig train_from_json(const json& j, TrainConfig t = {}) {
  t.batch_size = j.value("batch_size", t.batch_size);
  t.epochs_pretrain = j.value("epochs_pretrain", t.epochs_pretrain);
  t.epochs_mfrl = j.value("epochs_mfrl", t.epochs_mfrl);
  t.lr = j.value("lr", t.lr);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.tau = j.value("tau", t.tau);
  t.seed = j.value("seed", t.seed);
  t.augment_enabled = j.value("augment", t.augment_enabled);
  t.temperature = j.value("temperature", t.temperature);
  t.symmetric_baseline = j.value("symmetric_baseline", t.symmetric_baseline);
  t.mixed_ce_weight = j.value("mixed_ce_weight", t.mixed_ce_weight);
  t.grad_clip_norm = j.value("grad_clip_norm", t.grad_clip_norm);
  t.lr_mfrl = j.value("lr_mfrl", t.lr_mfrl);
  if (j.contains("rewards")) {
    const json& r = j.at("rewards");
    t.rewards.lambda1 = r.value("lambda1", t.rewards.lambda1);
    t.rewards.lambda2 = r.value("lambda2", t.rewards.lambda2);
    t.rewards.lambda3 = r.value("lambda3", t.rewards.lambda3);
    t.rewards.lambda4 = r.value("lambda4", t.rewards.lambda4);
    t.rewards.lambda5 = r.value("lambda5", t.rewards.lambda5);
    t.rewards.lambda6 = r.value("lambda6", t.rewards.lambda6);
  }
  return t;
}

// Fully resolved run configuration: config-file values with flag overrides
// applied; a copy is written next to every run's outputs.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SceneSpec scene;
  uint64_t seed = 0;

  json to_json() const {
    return json{{"seed", seed},
                {"model", json::parse(model.to_json())},
                {"train", train_to_json(train)},
                {"scene", scene_to_json(scene)}};
  }
};

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  in >> j;
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model").dump());
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
  if (j.contains("scene")) cfg.scene = scene_from_json(j.at("scene"));
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

void write_provenance(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "resolved_config.json");
  out << cfg.to_json().dump(2) << "\n";
}

json report_to_json(const EvalReport& r) {
  json j{{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
         {"tp", r.tp},               {"fp", r.fp},         {"fn", r.fn}};
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  return j;
}

std::string report_csv_header(bool with_accuracy) {
  return with_accuracy ? "format,precision,recall,f1,tp,fp,fn,accuracy"
                       : "format,precision,recall,f1,tp,fp,fn";
}

std::string report_csv_row(const std::string& fmt, const EvalReport& r) {
  char buf[256];
  if (r.accuracy)
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%ld,%ld,%ld,%.17g",
                  fmt.c_str(), r.precision, r.recall, r.f1, r.tp, r.fp, r.fn,
                  *r.accuracy);
  else
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%ld,%ld,%ld",
                  fmt.c_str(), r.precision, r.recall, r.f1, r.tp, r.fp, r.fn);
  return buf;
}

// --- eval ---------------------------------------------------------------------------

EvalReport eval_format(const SeqModel& model,
                       const std::vector<SceneRecord>& records,
                       SequenceFormat fmt, double tau, bool with_accuracy) {
  struct Row {
    long tp = 0, fp = 0, fn = 0;
    double acc_correct = 0, acc_total = 0;
  };
  std::vector<Row> rows(records.size());
  const Vocabulary& vocab = model.vocab();

  parallel_for(static_cast<int>(records.size()), [&](int i) {
    const SceneRecord& rec = records[static_cast<size_t>(i)];
    Row& row = rows[static_cast<size_t>(i)];
    const EncodedImage enc = model.encode_image(rec.image);
    const TokenSequence seq = model.greedy_decode(enc, fmt);
    DecodedScene dec;
    try {
      dec = decode_scene(seq.tokens, rec.dims, vocab);
    } catch (const std::exception&) {
    }
    std::vector<Lane> gts;
    switch (fmt) {
      case SequenceFormat::Segmentation: gts = rec.polygons(); break;
      case SequenceFormat::Anchor: gts = rec.polylines(); break;
      default: gts = rec.param_lanes(); break;
    }
    const MatchResult match = match_lanes(dec.lanes, gts, rec.dims, tau);
    row.tp = match.tp();
    row.fp = static_cast<long>(match.fp_indices.size());
    row.fn = static_cast<long>(match.fn_indices.size());
    if (with_accuracy) {
      const auto gt_lines = rec.gt_polylines();
      long points = 0;
      for (const auto& g : gt_lines) points += static_cast<long>(g.points.size());
      row.acc_total = static_cast<double>(points);
      row.acc_correct =
          tusimple_accuracy(dec.lanes, gt_lines, rec.dims) * row.acc_total;
    }
  });

  long tp = 0, fp = 0, fn = 0;
  double acc_correct = 0, acc_total = 0;
  for (const Row& row : rows) {
    tp += row.tp;
    fp += row.fp;
    fn += row.fn;
    acc_correct += row.acc_correct;
    acc_total += row.acc_total;
  }
  EvalReport report = f1_from_counts(tp, fp, fn);
  if (with_accuracy)
    report.accuracy = acc_total > 0 ? acc_correct / acc_total : 1.0;
  return report;
}

// --- infer overlay ---------------------------------------------------------------------

void set_pixel_rgb(Image& img, int x, int y, uint8_t r, uint8_t g, uint8_t b) {
  if (!img.in_bounds(x, y)) return;  // never write outside the image
  img.at(x, y, 0) = r;
  img.at(x, y, 1) = g;
  img.at(x, y, 2) = b;
}

void draw_segment(Image& img, Point a, Point b, uint8_t r, uint8_t g,
                  uint8_t bl) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    set_pixel_rgb(img, static_cast<int>(std::lround(a.x + t * (b.x - a.x))),
                  static_cast<int>(std::lround(a.y + t * (b.y - a.y))), r, g,
                  bl);
  }
}

Image render_overlay(const Image& base, const DecodedScene& dec,
                     ImageDims dims) {
  Image rgb(base.width, base.height, 3);
  for (int y = 0; y < base.height; ++y)
    for (int x = 0; x < base.width; ++x) {
      const uint8_t v = base.at(x, y, 0);
      rgb.at(x, y, 0) = v;
      rgb.at(x, y, 1) = v;
      rgb.at(x, y, 2) = v;
    }
  const uint8_t palette[6][3] = {{255, 80, 80},  {80, 255, 80},
                                 {80, 140, 255}, {255, 220, 60},
                                 {255, 80, 255}, {80, 255, 255}};
  for (size_t i = 0; i < dec.lanes.size(); ++i) {
    const auto* c = palette[i % 6];
    std::visit(
        [&](const auto& lane) {
          using T = std::decay_t<decltype(lane)>;
          if constexpr (std::is_same_v<T, PolylineLane>) {
            for (size_t k = 0; k + 1 < lane.points.size(); ++k)
              draw_segment(rgb, lane.points[k], lane.points[k + 1], c[0], c[1],
                           c[2]);
          } else if constexpr (std::is_same_v<T, PolygonLane>) {
            for (size_t k = 0; k < lane.vertices.size(); ++k)
              draw_segment(rgb, lane.vertices[k],
                           lane.vertices[(k + 1) % lane.vertices.size()], c[0],
                           c[1], c[2]);
          } else {
            for (int y = 0; y < dims.height; ++y) {
              const auto x = poly_eval(lane, y + 0.5, dims);
              if (x) set_pixel_rgb(rgb, static_cast<int>(std::lround(*x)), y,
                                   c[0], c[1], c[2]);
            }
          }
        },
        dec.lanes[i]);
  }
  return rgb;
}

json lanes_to_json(const DecodedScene& dec) {
  json lanes = json::array();
  for (const Lane& l : dec.lanes) {
    std::visit(
        [&](const auto& lane) {
          using T = std::decay_t<decltype(lane)>;
          if constexpr (std::is_same_v<T, PolylineLane>) {
            json pts = json::array();
            for (const Point& p : lane.points)
              pts.push_back(json::array({p.x, p.y}));
            lanes.push_back({{"type", "polyline"}, {"points", pts}});
          } else if constexpr (std::is_same_v<T, PolygonLane>) {
            json pts = json::array();
            for (const Point& p : lane.vertices)
              pts.push_back(json::array({p.x, p.y}));
            lanes.push_back({{"type", "polygon"}, {"vertices", pts}});
          } else {
            json coeffs = json::array();
            for (double v : lane.coeffs) coeffs.push_back(v);
            lanes.push_back({{"type", "parameter"},
                             {"coeffs", coeffs},
                             {"offset", lane.offset}});
          }
        },
        l);
  }
  json diags = json::array();
  for (const auto& d : dec.diagnostics)
    diags.push_back({{"position", d.position}, {"message", d.message}});
  return json{{"format", format_name(dec.format)},
              {"lanes", lanes},
              {"diagnostics", diags}};
}

std::vector<SequenceFormat> parse_formats(const std::string& name) {
  if (name == "all")
    return {SequenceFormat::Segmentation, SequenceFormat::Anchor,
            SequenceFormat::Parameter};
  const auto fmt = format_from_name(name);
  if (!fmt) throw CLI::ValidationError("--format", "unknown format " + name);
  return {*fmt};
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Unified sequence-generation lane detection at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override")
      ->configurable(false);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out;
  int gen_n = 100;
  std::optional<uint64_t> gen_seed;
  std::optional<int> gen_w, gen_h, gen_min_lanes, gen_max_lanes;
  std::optional<double> gen_curvature, gen_lane_width, gen_noise;
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--n", gen_n, "Number of scenes")->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--width", gen_w, "Image width");
  gen->add_option("--height", gen_h, "Image height");
  gen->add_option("--min-lanes", gen_min_lanes, "Minimum lanes per scene");
  gen->add_option("--max-lanes", gen_max_lanes, "Maximum lanes per scene");
  gen->add_option("--curvature", gen_curvature, "Centerline curvature scale");
  gen->add_option("--lane-width", gen_lane_width, "Stroke width in pixels");
  gen->add_option("--noise", gen_noise, "Background noise amplitude");

  // ---- train ----
  auto* train = app.add_subcommand("train", "Run the two-stage training pipeline");
  std::string train_data, train_val, train_out, train_stage = "both",
              train_ckpt;
  std::optional<uint64_t> train_seed;
  std::optional<int> train_batch, train_ep_pre, train_ep_mfrl;
  std::optional<double> train_lr, train_lr_mfrl, train_tau;
  std::optional<bool> train_augment;
  train->add_option("--data", train_data, "Training dataset directory")
      ->required();
  train->add_option("--val", train_val, "Held-out dataset directory")
      ->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--stage", train_stage, "pretrain|mfrl|both")
      ->check(CLI::IsMember({"pretrain", "mfrl", "both"}));
  train->add_option("--ckpt", train_ckpt,
                    "Stage-1 checkpoint (required for --stage mfrl)");
  train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--batch-size", train_batch, "Batch size");
  train->add_option("--epochs-pretrain", train_ep_pre, "Stage-1 epochs");
  train->add_option("--epochs-mfrl", train_ep_mfrl, "Stage-2 epochs");
  train->add_option("--lr", train_lr, "Learning rate");
  train->add_option("--lr-mfrl", train_lr_mfrl, "Stage-2 learning rate");
  train->add_option("--tau", train_tau, "Matching threshold");
  train->add_option("--augment", train_augment, "Enable augmentation");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string eval_data, eval_ckpt, eval_fmt_name = "all", eval_json, eval_csv;
  double eval_tau = kDefaultTau;
  bool eval_tusimple = false;
  std::optional<uint64_t> eval_seed;
  eval->add_option("--data", eval_data, "Dataset directory")->required();
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  eval->add_option("--format", eval_fmt_name, "seg|anchor|param|all");
  eval->add_option("--tau", eval_tau, "Matching threshold");
  eval->add_flag("--tusimple", eval_tusimple, "Also compute point accuracy");
  eval->add_option("--json", eval_json, "Write the report JSON here");
  eval->add_option("--csv", eval_csv, "Write the report CSV here");
  eval->add_option("--seed", eval_seed, "Accepted for interface uniformity");

  // ---- infer ----
  auto* infer = app.add_subcommand("infer", "Decode lanes from one image");
  std::string infer_image, infer_ckpt, infer_format = "anchor", infer_render;
  std::optional<uint64_t> infer_seed;
  infer->add_option("--image", infer_image, "Input PGM/PPM image")->required();
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint path")->required();
  infer->add_option("--format", infer_format, "seg|anchor|param");
  infer->add_option("--render", infer_render, "Write an overlay PPM here");
  infer->add_option("--seed", infer_seed, "Accepted for interface uniformity");

  // ---- verify ----
  auto* verify = app.add_subcommand("verify", "Run the oracle suites");
  std::string verify_suite = "all";
  long verify_pairs = 50000;
  verify->add_option("--suite", verify_suite,
                     "gradcheck|reinforce|codec|metrics|all")
      ->check(CLI::IsMember({"gradcheck", "reinforce", "codec", "metrics",
                             "all"}));
  verify->add_option("--pairs", verify_pairs,
                     "Sample pairs for the estimator oracle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg = load_config(config_path);

    if (gen->parsed()) {
      SceneSpec spec = cfg.scene;
      if (gen_seed) spec.seed = *gen_seed;
      if (gen_w) spec.dims.width = *gen_w;
      if (gen_h) spec.dims.height = *gen_h;
      if (gen_min_lanes) spec.min_lanes = *gen_min_lanes;
      if (gen_max_lanes) spec.max_lanes = *gen_max_lanes;
      if (gen_curvature) spec.curvature = *gen_curvature;
      if (gen_lane_width) spec.lane_width = *gen_lane_width;
      if (gen_noise) spec.noise = *gen_noise;
      cfg.scene = spec;
      cfg.seed = spec.seed;
      write_dataset(spec, gen_n, gen_out);
      write_provenance(cfg, gen_out);
      std::cout << "wrote " << gen_n << " scenes to " << gen_out << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      if (train_seed) {
        cfg.train.seed = *train_seed;
        cfg.seed = *train_seed;
      }
      if (train_batch) cfg.train.batch_size = *train_batch;
      if (train_ep_pre) cfg.train.epochs_pretrain = *train_ep_pre;
      if (train_ep_mfrl) cfg.train.epochs_mfrl = *train_ep_mfrl;
      if (train_lr) cfg.train.lr = *train_lr;
      if (train_lr_mfrl) cfg.train.lr_mfrl = *train_lr_mfrl;
      if (train_tau) cfg.train.tau = *train_tau;
      if (train_augment) cfg.train.augment_enabled = *train_augment;

      TrainStage stage = TrainStage::Both;
      if (train_stage == "pretrain") stage = TrainStage::Pretrain;
      if (train_stage == "mfrl") stage = TrainStage::Mfrl;
      if (stage == TrainStage::Mfrl && train_ckpt.empty()) {
        std::cerr << "train: --stage mfrl requires --ckpt with a stage-1 "
                     "checkpoint: the pipeline is two-stage (pretraining "
                     "first, reward tuning second)\n";
        return kExitUsage;
      }
      write_provenance(cfg, train_out);
      const RunTrainingResult result =
          run_training(cfg.train, cfg.model, train_data, train_val, train_out,
                       stage, train_ckpt);
      std::cout << "history: " << result.history_csv << "\n";
      if (!result.pretrain_ckpt.empty())
        std::cout << "pretrain checkpoint: " << result.pretrain_ckpt << "\n";
      if (!result.mfrl_ckpt.empty())
        std::cout << "mfrl checkpoint: " << result.mfrl_ckpt << "\n";
      return kExitOk;
    }

    if (eval->parsed()) {
      const SeqModel model = SeqModel::load(eval_ckpt);
      const std::vector<SceneRecord> records = read_dataset(eval_data);
      json out = json::object();
      std::vector<std::string> csv_rows;
      for (const SequenceFormat fmt : parse_formats(eval_fmt_name)) {
        const EvalReport report =
            eval_format(model, records, fmt, eval_tau, eval_tusimple);
        out[format_name(fmt)] = report_to_json(report);
        csv_rows.push_back(report_csv_row(format_name(fmt), report));
      }
      const std::string text = out.dump(2);
      std::cout << text << "\n";
      if (!eval_json.empty()) {
        std::ofstream f(eval_json);
        f << text << "\n";
      }
      if (!eval_csv.empty()) {
        std::ofstream f(eval_csv);
        f << report_csv_header(eval_tusimple) << "\n";
        for (const auto& row : csv_rows) f << row << "\n";
      }
      return kExitOk;
    }

    if (infer->parsed()) {
      const SeqModel model = SeqModel::load(infer_ckpt);
      const Image img = read_pnm(infer_image);
      const ModelConfig& mc = model.config();
      if (img.width != mc.image_width || img.height != mc.image_height ||
          img.channels != mc.channels) {
        std::cerr << "infer: image is " << img.width << "x" << img.height
                  << "x" << img.channels << " but the checkpoint expects "
                  << mc.image_width << "x" << mc.image_height << "x"
                  << mc.channels << "\n";
        return kExitRuntime;
      }
      const auto fmt = format_from_name(infer_format);
      if (!fmt) {
        std::cerr << "infer: unknown format " << infer_format << "\n";
        return kExitUsage;
      }
      const EncodedImage enc = model.encode_image(img);
      const TokenSequence seq = model.greedy_decode(enc, *fmt);
      const ImageDims dims{img.width, img.height};
      const DecodedScene dec = decode_scene(seq.tokens, dims, model.vocab());
      std::cout << lanes_to_json(dec).dump(2) << "\n";
      if (!infer_render.empty())
        write_pnm(render_overlay(img, dec, dims), infer_render);
      return kExitOk;
    }

    if (verify->parsed()) {
      bool ok = true;
      const auto run_suite = [&](const char* name,
                                 std::vector<CheckResult> results) {
        std::cout << "== " << name << " ==\n";
        print_results(results);
        ok = ok && all_passed(results);
      };
      if (verify_suite == "codec" || verify_suite == "all")
        run_suite("codec", verify_codec());
      if (verify_suite == "metrics" || verify_suite == "all") {
        run_suite("metrics", verify_metrics());
        run_suite("rewards", verify_rewards());
      }
      if (verify_suite == "gradcheck" || verify_suite == "all")
        run_suite("gradcheck", verify_gradcheck());
      if (verify_suite == "reinforce" || verify_suite == "all")
        run_suite("reinforce", verify_reinforce(verify_pairs));
      std::cout << (ok ? "verification passed" : "verification FAILED")
                << "\n";
      return ok ? kExitOk : kExitVerification;
    }
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace laneseq
