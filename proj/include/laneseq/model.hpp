#pragma once

#include <span>
#include <string>
#include <vector>

#include "laneseq/autodiff.hpp"
#include "laneseq/codec.hpp"
#include "laneseq/image.hpp"
#include "laneseq/rng.hpp"

namespace laneseq {

struct ModelConfig {
  int image_width = 160;
  int image_height = 64;
  int channels = 1;
  int patch_size = 8;
  int embed_dim = 64;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  int ff_dim = 256;
  int n_bins = 1000;
  int max_seq_len = 256;

  int n_patches() const {
    return (image_height / patch_size) * (image_width / patch_size);
  }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int head_dim() const { return embed_dim / heads; }
  // Output/embedding rows: padding id 0, coordinate bins,六 specials.
  int vocab_rows() const { return n_bins + 7; }

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

// Encoder activations plus per-decoder-layer cross-attention keys/values,
// precomputed once per image and shared by any number of decode sessions.
struct EncodedImage {
  ad::Mat enc;                   // n_patches x embed_dim
  std::vector<ad::Mat> cross_k;  // per decoder layer: n_patches x embed_dim
  std::vector<ad::Mat> cross_v;
};

struct SampledSequence {
  TokenSequence tokens;                   // includes the [START, format] prompt
  double log_prob = 0.0;                  // sum of per-step values, <= 0
  std::vector<double> per_step_log_probs; // one per generated token
  bool ended = false;                     // reached END before max length
};

class SeqModel;

// Incremental decoder with a per-step self-attention cache. One session per
// generated sequence; the encoder work lives in EncodedImage.
class DecodeSession {
 public:
  DecodeSession(const SeqModel& model, const EncodedImage& enc);

  // Feeds one token and returns the logits for the next position.
  std::span<const double> step(int token);
  int length() const { return len_; }
  void reset();

 private:
  const SeqModel& model_;
  const EncodedImage& enc_;
  std::vector<std::vector<double>> self_k_;  // per layer: len * embed_dim
  std::vector<std::vector<double>> self_v_;
  std::vector<double> logits_;
  int len_ = 0;
};

class SeqModel {
 public:
  SeqModel(const ModelConfig& cfg, uint64_t seed);  // initialized parameters
  explicit SeqModel(const ModelConfig& cfg);        // zeroed (for loading)

  SeqModel(SeqModel&&) = default;
  SeqModel& operator=(SeqModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  // --- training path (tape-recorded) ---
  ad::Value build_encoder(ad::Graph& g, const Image& img) const;
  ad::Value build_logits(ad::Graph& g, ad::Value enc,
                         std::span<const int> input_tokens) const;
  ad::Value build_sequence_loss(ad::Graph& g, ad::Value enc,
                                const SequenceExample& ex,
                                bool mean = true) const;
  // -log Q of a generated sequence ([START, format, body...]) under the
  // model, for REINFORCE; prompt positions carry weight 0.
  ad::Value build_logprob_loss(ad::Graph& g, ad::Value enc,
                               std::span<const int> tokens) const;

  // --- inference path (no tape, KV cache) ---
  EncodedImage encode_image(const Image& img) const;
  std::vector<double> decode_logits(const EncodedImage& enc,
                                    std::span<const int> prefix) const;
  SampledSequence sample_sequence(const EncodedImage& enc, SequenceFormat fmt,
                                  double temperature, Rng& rng) const;
  TokenSequence greedy_decode(const EncodedImage& enc,
                              SequenceFormat fmt) const;

  void save(const std::string& path) const;
  static SeqModel load(const std::string& path);

 private:
  friend class DecodeSession;
  void create_parameters();
  void init_parameters(uint64_t seed);
  ad::Mat patchify(const Image& img) const;

  ModelConfig cfg_;
  Vocabulary vocab_;
  ad::ParameterStore params_;
};

// Samples an index from softmax(logits / temperature).
int sample_from_logits(std::span<const double> logits, double temperature,
                       Rng& rng);
// log softmax(logits)[index] at temperature 1.
double log_softmax_at(std::span<const double> logits, int index);
int argmax_index(std::span<const double> logits);

}  // namespace laneseq
