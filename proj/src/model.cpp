#include "laneseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace laneseq {

using ad::Graph;
using ad::Mat;
using ad::Tensor;
using ad::Value;

// --- ModelConfig -------------------------------------------------------------

void ModelConfig::validate() const {
  if (image_width < 1 || image_height < 1)
    throw std::invalid_argument("ModelConfig: bad image dims");
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("ModelConfig: channels must be 1 or 3");
  if (patch_size < 1 || image_width % patch_size != 0 ||
      image_height % patch_size != 0)
    throw std::invalid_argument(
        "ModelConfig: image dims must be divisible by patch size");
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
    throw std::invalid_argument(
        "ModelConfig: embed dim must be divisible by heads");
  if (encoder_layers < 1 || decoder_layers < 1 || ff_dim < 1)
    throw std::invalid_argument("ModelConfig: bad layer sizes");
  if (n_bins < 2) throw std::invalid_argument("ModelConfig: n_bins too small");
  if (max_seq_len < 4)
    throw std::invalid_argument("ModelConfig: max_seq_len too small");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j{{"image_width", image_width},
                   {"image_height", image_height},
                   {"channels", channels},
                   {"patch_size", patch_size},
                   {"embed_dim", embed_dim},
                   {"encoder_layers", encoder_layers},
                   {"decoder_layers", decoder_layers},
                   {"heads", heads},
                   {"ff_dim", ff_dim},
                   {"n_bins", n_bins},
                   {"max_seq_len", max_seq_len}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.image_width = j.value("image_width", c.image_width);
  c.image_height = j.value("image_height", c.image_height);
  c.channels = j.value("channels", c.channels);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.n_bins = j.value("n_bins", c.n_bins);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.validate();
  return c;
}

// --- construction ---------------------------------------------------------------

SeqModel::SeqModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  vocab_.n_bins = cfg_.n_bins;
  create_parameters();
}

SeqModel::SeqModel(const ModelConfig& cfg, uint64_t seed) : SeqModel(cfg) {
  init_parameters(seed);
}

void SeqModel::create_parameters() {
  const int D = cfg_.embed_dim;
  const int F = cfg_.ff_dim;
  const int V = cfg_.vocab_rows();

  params_.create("enc.patch.w", cfg_.patch_dim(), D);
  params_.create("enc.patch.b", 1, D);
  params_.create("enc.pos", cfg_.n_patches(), D);
  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    const std::string p = "enc.L" + std::to_string(i) + ".";
    params_.create(p + "ln1.g", 1, D);
    params_.create(p + "ln1.b", 1, D);
    for (const char* head : {"q", "k", "v", "o"}) {
      params_.create(p + "attn." + head + ".w", D, D);
      params_.create(p + "attn." + head + ".b", 1, D);
    }
    params_.create(p + "ln2.g", 1, D);
    params_.create(p + "ln2.b", 1, D);
    params_.create(p + "ff.w1", D, F);
    params_.create(p + "ff.b1", 1, F);
    params_.create(p + "ff.w2", F, D);
    params_.create(p + "ff.b2", 1, D);
  }

  params_.create("dec.tok_emb", V, D);
  params_.create("dec.pos", cfg_.max_seq_len, D);
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    const std::string p = "dec.L" + std::to_string(i) + ".";
    params_.create(p + "ln1.g", 1, D);
    params_.create(p + "ln1.b", 1, D);
    for (const char* head : {"q", "k", "v", "o"}) {
      params_.create(p + "self." + head + ".w", D, D);
      params_.create(p + "self." + head + ".b", 1, D);
    }
    params_.create(p + "ln2.g", 1, D);
    params_.create(p + "ln2.b", 1, D);
    for (const char* head : {"q", "k", "v", "o"}) {
      params_.create(p + "cross." + head + ".w", D, D);
      params_.create(p + "cross." + head + ".b", 1, D);
    }
    params_.create(p + "ln3.g", 1, D);
    params_.create(p + "ln3.b", 1, D);
    params_.create(p + "ff.w1", D, F);
    params_.create(p + "ff.b1", 1, F);
    params_.create(p + "ff.w2", F, D);
    params_.create(p + "ff.b2", 1, D);
  }
  params_.create("dec.out.w", D, V);
  params_.create("dec.out.b", 1, V);
}

void SeqModel::init_parameters(uint64_t seed) {
  Rng rng(seed);
  for (size_t t = 0; t < params_.count(); ++t) {
    Tensor& tensor = params_.at(t);
    const std::string& name = tensor.name();
    const std::string last = name.substr(name.rfind('.') + 1);
    if (last == "g") {
      std::fill(tensor.value().data.begin(), tensor.value().data.end(), 1.0);
    } else if (last == "b" || last == "b1" || last == "b2") {
      std::fill(tensor.value().data.begin(), tensor.value().data.end(), 0.0);
    } else {
      for (double& v : tensor.value().data) v = rng.trunc_normal(0.02);
    }
  }
}

// --- shared forward pieces --------------------------------------------------------

Mat SeqModel::patchify(const Image& img) const {
  if (img.width != cfg_.image_width || img.height != cfg_.image_height ||
      img.channels != cfg_.channels)
    throw std::invalid_argument(
        "encode_image: image dims do not match model config");
  const int p = cfg_.patch_size;
  const int cols = cfg_.image_width / p;
  Mat out(cfg_.n_patches(), cfg_.patch_dim());
  for (int pr = 0; pr < cfg_.image_height / p; ++pr) {
    for (int pc = 0; pc < cols; ++pc) {
      double* row = out.row(pr * cols + pc);
      int idx = 0;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int c = 0; c < cfg_.channels; ++c)
            row[idx++] =
                img.at(pc * p + px, pr * p + py, c) / 255.0 * 2.0 - 1.0;
    }
  }
  return out;
}

namespace {

// Multi-head attention on the tape. kv == q_in gives self-attention; a
// causal mask (0 / -1e30 additive) is provided by the caller when needed.
Value graph_attention(Graph& g, const ad::ParameterStore& params,
                      const std::string& prefix, Value q_in, Value kv_in,
                      int heads, const Mat* causal_mask) {
  const Tensor& wq = params.get(prefix + ".q.w");
  const int D = wq.value().cols;
  const int dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Value q = g.add_rowvec(g.matmul(q_in, g.param(wq)),
                               g.param(params.get(prefix + ".q.b")));
  const Value k = g.add_rowvec(g.matmul(kv_in, g.param(params.get(prefix + ".k.w"))),
                               g.param(params.get(prefix + ".k.b")));
  const Value v = g.add_rowvec(g.matmul(kv_in, g.param(params.get(prefix + ".v.w"))),
                               g.param(params.get(prefix + ".v.b")));

  std::vector<Value> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Value qh = g.slice_cols(q, h * dh, (h + 1) * dh);
    const Value kh = g.slice_cols(k, h * dh, (h + 1) * dh);
    const Value vh = g.slice_cols(v, h * dh, (h + 1) * dh);
    Value scores = g.scale(g.matmul_nt(qh, kh), scale);
    if (causal_mask) scores = g.add(scores, g.constant(*causal_mask));
    ctx.push_back(g.matmul(g.softmax_rows(scores), vh));
  }
  const Value merged = g.concat_cols(ctx);
  return g.add_rowvec(g.matmul(merged, g.param(params.get(prefix + ".o.w"))),
                      g.param(params.get(prefix + ".o.b")));
}

Value graph_layer_norm(Graph& g, const ad::ParameterStore& params,
                       const std::string& prefix, Value x) {
  return g.layer_norm(x, g.param(params.get(prefix + ".g")),
                      g.param(params.get(prefix + ".b")));
}

Value graph_ff(Graph& g, const ad::ParameterStore& params,
               const std::string& prefix, Value x) {
  const Value h = g.gelu(
      g.add_rowvec(g.matmul(x, g.param(params.get(prefix + ".w1"))),
                   g.param(params.get(prefix + ".b1"))));
  return g.add_rowvec(g.matmul(h, g.param(params.get(prefix + ".w2"))),
                      g.param(params.get(prefix + ".b2")));
}

Mat causal_mask_mat(int n) {
  Mat mask(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) mask.at(r, c) = -1e30;
  return mask;
}

}  // namespace

Value SeqModel::build_encoder(Graph& g, const Image& img) const {
  Value x = g.add(
      g.add_rowvec(g.matmul(g.constant(patchify(img)),
                            g.param(params_.get("enc.patch.w"))),
                   g.param(params_.get("enc.patch.b"))),
      g.param(params_.get("enc.pos")));
  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    const std::string p = "enc.L" + std::to_string(i) + ".";
    const Value h1 = graph_layer_norm(g, params_, p + "ln1", x);
    x = g.add(x, graph_attention(g, params_, p + "attn", h1, h1, cfg_.heads,
                                 nullptr));
    const Value h2 = graph_layer_norm(g, params_, p + "ln2", x);
    x = g.add(x, graph_ff(g, params_, p + "ff", h2));
  }
  return x;
}

Value SeqModel::build_logits(Graph& g, Value enc,
                             std::span<const int> input_tokens) const {
  const int T = static_cast<int>(input_tokens.size());
  if (T < 1) throw std::invalid_argument("build_logits: empty input");
  if (T > cfg_.max_seq_len)
    throw std::invalid_argument("build_logits: prefix too long");
  std::vector<int> tok_ids(input_tokens.begin(), input_tokens.end());
  for (int id : tok_ids)
    if (id < 0 || id >= cfg_.vocab_rows())
      throw std::invalid_argument("build_logits: token id out of range");
  std::vector<int> pos_ids(static_cast<size_t>(T));
  for (int j = 0; j < T; ++j) pos_ids[static_cast<size_t>(j)] = j;

  Value x = g.add(g.gather_rows(g.param(params_.get("dec.tok_emb")), tok_ids),
                  g.gather_rows(g.param(params_.get("dec.pos")), pos_ids));
  const Mat mask = causal_mask_mat(T);
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    const std::string p = "dec.L" + std::to_string(i) + ".";
    const Value h1 = graph_layer_norm(g, params_, p + "ln1", x);
    x = g.add(x,
              graph_attention(g, params_, p + "self", h1, h1, cfg_.heads, &mask));
    const Value h2 = graph_layer_norm(g, params_, p + "ln2", x);
    x = g.add(x, graph_attention(g, params_, p + "cross", h2, enc, cfg_.heads,
                                 nullptr));
    const Value h3 = graph_layer_norm(g, params_, p + "ln3", x);
    x = g.add(x, graph_ff(g, params_, p + "ff", h3));
  }
  return g.add_rowvec(g.matmul(x, g.param(params_.get("dec.out.w"))),
                      g.param(params_.get("dec.out.b")));
}

Value SeqModel::build_sequence_loss(Graph& g, Value enc,
                                    const SequenceExample& ex,
                                    bool mean) const {
  if (ex.input.size() != ex.target.size() ||
      ex.input.size() != ex.weights.size())
    throw std::invalid_argument("build_sequence_loss: length mismatch");
  const Value logits = build_logits(g, enc, ex.input);
  return g.weighted_cross_entropy(logits, ex.target, ex.weights, mean);
}

Value SeqModel::build_logprob_loss(Graph& g, Value enc,
                                   std::span<const int> tokens) const {
  if (tokens.size() < 3)
    throw std::invalid_argument("build_logprob_loss: sequence too short");
  // tokens = [START, format, generated...]. Every generated token was drawn
  // from Q (including any stray special or padding ids), so each one gets
  // weight 1; only the prompt-given format target is excluded.
  const std::vector<int> input(tokens.begin(), tokens.end() - 1);
  const std::vector<int> target(tokens.begin() + 1, tokens.end());
  std::vector<double> weights(target.size(), 1.0);
  weights[0] = 0.0;
  const Value logits = build_logits(g, enc, input);
  return g.weighted_cross_entropy(logits, target, weights, false);
}

// --- inference path ------------------------------------------------------------

namespace {

// out(1xN) = x(1xK) * W(KxN) + b, reduction over k ascending as in matmul_acc.
void matvec_bias(const double* x, const Mat& w, const Mat& b, double* out) {
  for (int j = 0; j < w.cols; ++j) out[j] = b.at(0, j);
  for (int k = 0; k < w.rows; ++k) {
    const double xk = x[k];
    const double* wrow = w.row(k);
    for (int j = 0; j < w.cols; ++j) out[j] += xk * wrow[j];
  }
}

void layer_norm_row(const double* x, const Mat& gamma, const Mat& beta, int C,
                    double* out) {
  double mean = 0.0;
  for (int c = 0; c < C; ++c) mean += x[c];
  mean /= C;
  double var = 0.0;
  for (int c = 0; c < C; ++c) {
    const double d = x[c] - mean;
    var += d * d;
  }
  var /= C;
  const double is = 1.0 / std::sqrt(var + 1e-5);
  for (int c = 0; c < C; ++c)
    out[c] = gamma.at(0, c) * ((x[c] - mean) * is) + beta.at(0, c);
}

void softmax_inplace(std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  const double inv = 1.0 / sum;
  for (double& x : v) x *= inv;
}

constexpr double kGeluInvSqrt2 = 0.70710678118654752440;

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kGeluInvSqrt2));
}

// Multi-head attention for one query row against S cached key/value rows
// stored contiguously (S x D). Adds the projected context into x.
void attend_row(const double* q, const double* keys, const double* vals,
                int S, int D, int heads, const Mat& wo, const Mat& bo,
                std::vector<double>& scratch_probs,
                std::vector<double>& scratch_ctx, double* x) {
  const int dh = D / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::fill(scratch_ctx.begin(), scratch_ctx.end(), 0.0);
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    scratch_probs.resize(static_cast<size_t>(S));
    for (int s = 0; s < S; ++s) {
      const double* krow = keys + static_cast<size_t>(s) * D + off;
      double acc = 0.0;
      for (int d = 0; d < dh; ++d) acc += q[off + d] * krow[d];
      scratch_probs[static_cast<size_t>(s)] = acc * scale;
    }
    softmax_inplace(scratch_probs);
    // ctx_h = sum_s p_s * v_s, s ascending (matches the tape's matmul order).
    for (int s = 0; s < S; ++s) {
      const double p = scratch_probs[static_cast<size_t>(s)];
      const double* vrow = vals + static_cast<size_t>(s) * D + off;
      for (int d = 0; d < dh; ++d) scratch_ctx[static_cast<size_t>(off + d)] += p * vrow[d];
    }
  }
  std::vector<double> proj(static_cast<size_t>(D));
  matvec_bias(scratch_ctx.data(), wo, bo, proj.data());
  for (int d = 0; d < D; ++d) x[d] += proj[d];
}

}  // namespace

EncodedImage SeqModel::encode_image(const Image& img) const {
  const int D = cfg_.embed_dim;
  const int P = cfg_.n_patches();
  const Mat patches = patchify(img);

  Mat x(P, D);
  {
    const Mat& w = params_.get("enc.patch.w").value();
    const Mat& b = params_.get("enc.patch.b").value();
    const Mat& pos = params_.get("enc.pos").value();
    for (int r = 0; r < P; ++r) {
      matvec_bias(patches.row(r), w, b, x.row(r));
      for (int d = 0; d < D; ++d) x.at(r, d) += pos.at(r, d);
    }
  }

  std::vector<double> h(static_cast<size_t>(P) * D);
  std::vector<double> q(h.size()), k(h.size()), v(h.size());
  std::vector<double> probs, ctx(static_cast<size_t>(D));
  for (int i = 0; i < cfg_.encoder_layers; ++i) {
    const std::string p = "enc.L" + std::to_string(i) + ".";
    const Mat& g1 = params_.get(p + "ln1.g").value();
    const Mat& b1 = params_.get(p + "ln1.b").value();
    for (int r = 0; r < P; ++r)
      layer_norm_row(x.row(r), g1, b1, D, &h[static_cast<size_t>(r) * D]);
    const Mat& wq = params_.get(p + "attn.q.w").value();
    const Mat& bq = params_.get(p + "attn.q.b").value();
    const Mat& wk = params_.get(p + "attn.k.w").value();
    const Mat& bk = params_.get(p + "attn.k.b").value();
    const Mat& wv = params_.get(p + "attn.v.w").value();
    const Mat& bv = params_.get(p + "attn.v.b").value();
    const Mat& wo = params_.get(p + "attn.o.w").value();
    const Mat& bo = params_.get(p + "attn.o.b").value();
    for (int r = 0; r < P; ++r) {
      matvec_bias(&h[static_cast<size_t>(r) * D], wq, bq, &q[static_cast<size_t>(r) * D]);
      matvec_bias(&h[static_cast<size_t>(r) * D], wk, bk, &k[static_cast<size_t>(r) * D]);
      matvec_bias(&h[static_cast<size_t>(r) * D], wv, bv, &v[static_cast<size_t>(r) * D]);
    }
    for (int r = 0; r < P; ++r)
      attend_row(&q[static_cast<size_t>(r) * D], k.data(), v.data(), P, D,
                 cfg_.heads, wo, bo, probs, ctx, x.row(r));

    const Mat& g2 = params_.get(p + "ln2.g").value();
    const Mat& b2 = params_.get(p + "ln2.b").value();
    const Mat& w1 = params_.get(p + "ff.w1").value();
    const Mat& fb1 = params_.get(p + "ff.b1").value();
    const Mat& w2 = params_.get(p + "ff.w2").value();
    const Mat& fb2 = params_.get(p + "ff.b2").value();
    std::vector<double> ff_h(static_cast<size_t>(cfg_.ff_dim));
    std::vector<double> ff_out(static_cast<size_t>(D));
    std::vector<double> norm_row(static_cast<size_t>(D));
    for (int r = 0; r < P; ++r) {
      layer_norm_row(x.row(r), g2, b2, D, norm_row.data());
      matvec_bias(norm_row.data(), w1, fb1, ff_h.data());
      for (double& t : ff_h) t = gelu_scalar(t);
      matvec_bias(ff_h.data(), w2, fb2, ff_out.data());
      for (int d = 0; d < D; ++d) x.at(r, d) += ff_out[static_cast<size_t>(d)];
    }
  }

  EncodedImage out;
  out.enc = std::move(x);
  out.cross_k.reserve(static_cast<size_t>(cfg_.decoder_layers));
  out.cross_v.reserve(static_cast<size_t>(cfg_.decoder_layers));
  for (int i = 0; i < cfg_.decoder_layers; ++i) {
    const std::string p = "dec.L" + std::to_string(i) + ".cross.";
    const Mat& wk = params_.get(p + "k.w").value();
    const Mat& bk = params_.get(p + "k.b").value();
    const Mat& wv = params_.get(p + "v.w").value();
    const Mat& bv = params_.get(p + "v.b").value();
    Mat ck(P, D), cv(P, D);
    for (int r = 0; r < P; ++r) {
      matvec_bias(out.enc.row(r), wk, bk, ck.row(r));
      matvec_bias(out.enc.row(r), wv, bv, cv.row(r));
    }
    out.cross_k.push_back(std::move(ck));
    out.cross_v.push_back(std::move(cv));
  }
  return out;
}

DecodeSession::DecodeSession(const SeqModel& model, const EncodedImage& enc)
    : model_(model), enc_(enc) {
  const auto& cfg = model.config();
  self_k_.resize(static_cast<size_t>(cfg.decoder_layers));
  self_v_.resize(static_cast<size_t>(cfg.decoder_layers));
  logits_.resize(static_cast<size_t>(cfg.vocab_rows()));
}

void DecodeSession::reset() {
  for (auto& k : self_k_) k.clear();
  for (auto& v : self_v_) v.clear();
  len_ = 0;
}

std::span<const double> DecodeSession::step(int token) {
  const auto& cfg = model_.config();
  const auto& params = model_.params_;
  const int D = cfg.embed_dim;
  if (len_ >= cfg.max_seq_len)
    throw std::invalid_argument("DecodeSession: prefix too long");
  if (token < 0 || token >= cfg.vocab_rows())
    throw std::invalid_argument("DecodeSession: token id out of range");

  std::vector<double> x(static_cast<size_t>(D));
  {
    const Mat& tok = params.get("dec.tok_emb").value();
    const Mat& pos = params.get("dec.pos").value();
    for (int d = 0; d < D; ++d)
      x[static_cast<size_t>(d)] = tok.at(token, d) + pos.at(len_, d);
  }

  std::vector<double> h(static_cast<size_t>(D)), q(static_cast<size_t>(D)),
      kv(static_cast<size_t>(D));
  std::vector<double> probs, ctx(static_cast<size_t>(D));
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    const std::string p = "dec.L" + std::to_string(i) + ".";
    auto& kcache = self_k_[static_cast<size_t>(i)];
    auto& vcache = self_v_[static_cast<size_t>(i)];

    layer_norm_row(x.data(), params.get(p + "ln1.g").value(),
                   params.get(p + "ln1.b").value(), D, h.data());
    matvec_bias(h.data(), params.get(p + "self.q.w").value(),
                params.get(p + "self.q.b").value(), q.data());
    matvec_bias(h.data(), params.get(p + "self.k.w").value(),
                params.get(p + "self.k.b").value(), kv.data());
    kcache.insert(kcache.end(), kv.begin(), kv.end());
    matvec_bias(h.data(), params.get(p + "self.v.w").value(),
                params.get(p + "self.v.b").value(), kv.data());
    vcache.insert(vcache.end(), kv.begin(), kv.end());
    attend_row(q.data(), kcache.data(), vcache.data(), len_ + 1, D, cfg.heads,
               params.get(p + "self.o.w").value(),
               params.get(p + "self.o.b").value(), probs, ctx, x.data());

    layer_norm_row(x.data(), params.get(p + "ln2.g").value(),
                   params.get(p + "ln2.b").value(), D, h.data());
    matvec_bias(h.data(), params.get(p + "cross.q.w").value(),
                params.get(p + "cross.q.b").value(), q.data());
    attend_row(q.data(), enc_.cross_k[static_cast<size_t>(i)].data.data(),
               enc_.cross_v[static_cast<size_t>(i)].data.data(),
               cfg.n_patches(), D, cfg.heads,
               params.get(p + "cross.o.w").value(),
               params.get(p + "cross.o.b").value(), probs, ctx, x.data());

    layer_norm_row(x.data(), params.get(p + "ln3.g").value(),
                   params.get(p + "ln3.b").value(), D, h.data());
    std::vector<double> ff_h(static_cast<size_t>(cfg.ff_dim));
    matvec_bias(h.data(), params.get(p + "ff.w1").value(),
                params.get(p + "ff.b1").value(), ff_h.data());
    for (double& t : ff_h) t = gelu_scalar(t);
    std::vector<double> ff_out(static_cast<size_t>(D));
    matvec_bias(ff_h.data(), params.get(p + "ff.w2").value(),
                params.get(p + "ff.b2").value(), ff_out.data());
    for (int d = 0; d < D; ++d) x[static_cast<size_t>(d)] += ff_out[static_cast<size_t>(d)];
  }

  matvec_bias(x.data(), params.get("dec.out.w").value(),
              params.get("dec.out.b").value(), logits_.data());
  ++len_;
  return logits_;
}

std::vector<double> SeqModel::decode_logits(const EncodedImage& enc,
                                            std::span<const int> prefix) const {
  if (prefix.empty())
    throw std::invalid_argument("decode_logits: empty prefix");
  if (static_cast<int>(prefix.size()) >= cfg_.max_seq_len)
    throw std::invalid_argument("decode_logits: prefix too long");
  DecodeSession session(*this, enc);
  std::span<const double> logits;
  for (int t : prefix) logits = session.step(t);
  return std::vector<double>(logits.begin(), logits.end());
}

int sample_from_logits(std::span<const double> logits, double temperature,
                       Rng& rng) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("sample_from_logits: temperature must be > 0");
  std::vector<double> probs(logits.begin(), logits.end());
  for (double& p : probs) p /= temperature;
  softmax_inplace(probs);
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

double log_softmax_at(std::span<const double> logits, int index) {
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  double sum = 0.0;
  for (double x : logits) sum += std::exp(x - mx);
  return logits[static_cast<size_t>(index)] - mx - std::log(sum);
}

int argmax_index(std::span<const double> logits) {
  int best = 0;
  for (size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[static_cast<size_t>(best)])
      best = static_cast<int>(i);
  return best;
}

SampledSequence SeqModel::sample_sequence(const EncodedImage& enc,
                                          SequenceFormat fmt,
                                          double temperature, Rng& rng) const {
  SampledSequence out;
  out.tokens.format = fmt;
  out.tokens.tokens = {vocab_.start_id(), vocab_.format_id(fmt)};

  DecodeSession session(*this, enc);
  session.step(vocab_.start_id());
  std::span<const double> logits = session.step(vocab_.format_id(fmt));
  while (static_cast<int>(out.tokens.tokens.size()) < cfg_.max_seq_len) {
    const int tok = sample_from_logits(logits, temperature, rng);
    out.per_step_log_probs.push_back(log_softmax_at(logits, tok));
    out.log_prob += out.per_step_log_probs.back();
    out.tokens.tokens.push_back(tok);
    if (tok == vocab_.end_id()) {
      out.ended = true;
      break;
    }
    logits = session.step(tok);
  }
  return out;
}

TokenSequence SeqModel::greedy_decode(const EncodedImage& enc,
                                      SequenceFormat fmt) const {
  TokenSequence out;
  out.format = fmt;
  out.tokens = {vocab_.start_id(), vocab_.format_id(fmt)};
  DecodeSession session(*this, enc);
  session.step(vocab_.start_id());
  std::span<const double> logits = session.step(vocab_.format_id(fmt));
  while (static_cast<int>(out.tokens.size()) < cfg_.max_seq_len) {
    const int tok = argmax_index(logits);
    out.tokens.push_back(tok);
    if (tok == vocab_.end_id()) break;
    logits = session.step(tok);
  }
  return out;
}

// --- checkpoints ------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[8] = {'L', 'S', 'Q', 'C', 'K', 'P', 'T', '1'};
}

void SeqModel::save(const std::string& path) const {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config"] = nlohmann::json::parse(cfg_.to_json());
  nlohmann::json tensors = nlohmann::json::array();
  for (size_t t = 0; t < params_.count(); ++t) {
    const Tensor& tensor = params_.at(t);
    tensors.push_back({{"name", tensor.name()},
                       {"rows", tensor.value().rows},
                       {"cols", tensor.value().cols},
                       {"dtype", "f64"}});
  }
  manifest["tensors"] = tensors;
  const std::string manifest_text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save: cannot open " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const uint64_t len = manifest_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(manifest_text.data(), static_cast<std::streamsize>(len));
  for (size_t t = 0; t < params_.count(); ++t) {
    const Mat& m = params_.at(t).value();
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save: write failed for " + path);
}

SeqModel SeqModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) ||
      std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load: not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string manifest_text(len, '\0');
  in.read(manifest_text.data(), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len))
    throw std::runtime_error("load: truncated manifest in " + path);

  const nlohmann::json manifest = nlohmann::json::parse(manifest_text);
  if (manifest.value("version", 0) != 1)
    throw std::runtime_error("load: unsupported checkpoint version");
  SeqModel model(ModelConfig::from_json(manifest.at("config").dump()));

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != model.params_.count())
    throw std::runtime_error("load: tensor count mismatch");
  for (size_t t = 0; t < model.params_.count(); ++t) {
    Tensor& tensor = model.params_.at(t);
    const auto& meta = tensors.at(t);
    if (meta.at("name").get<std::string>() != tensor.name() ||
        meta.at("rows").get<int>() != tensor.value().rows ||
        meta.at("cols").get<int>() != tensor.value().cols ||
        meta.at("dtype").get<std::string>() != "f64")
      throw std::runtime_error("load: tensor layout mismatch at " +
                               tensor.name());
    in.read(reinterpret_cast<char*>(tensor.value().data.data()),
            static_cast<std::streamsize>(tensor.value().size() *
                                         sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(tensor.value().size() *
                                                    sizeof(double)))
      throw std::runtime_error("load: truncated tensor data in " + path);
  }
  return model;
}

}  // namespace laneseq
