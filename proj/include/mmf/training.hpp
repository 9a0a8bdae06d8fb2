#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mmf/coattention.hpp"
#include "mmf/data.hpp"
#include "mmf/encoders.hpp"
#include "mmf/fusion.hpp"

namespace mmf {

enum class ModelVariant { kCoAttention, kConcatBaseline, kBilinearBaseline, kDotBaseline };

std::string to_string(ModelVariant variant);
ModelVariant model_variant_from(const std::string& name);

struct TrainConfig {
  ModelVariant variant = ModelVariant::kCoAttention;

  // attention-model structure (ignored by the baselines)
  AttentionMode attention = AttentionMode::kBoth;
  bool weighted_layer_mix = true;  // off: raw top layer feeds the encoder
  bool recurrent_encoder = true;   // off: a feed-forward layer replaces the recurrence
  std::size_t hidden = 32;         // recurrent state width per direction
  std::size_t common_dim = 32;     // shared modality width d
  std::size_t attn_dim = 0;        // attention map width k; 0 uses common_dim
  std::size_t head_hidden = 0;     // classifier hidden width; 0 matches the feature width
  std::size_t bilinear_width = 0;  // bilinear baseline output; 0 uses min(d_img, d_t)

  // optimization
  int epochs = 10;
  std::size_t batch_size = 16;
  std::size_t max_seq_len = 510;
  double base_lr = 3e-4;
  double adapter_lr_scale = 0.01;  // multiplier for embedding-adapter groups
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
};

// Throws ConfigError on unusable values; returns human-readable warnings for
// legal-but-suspicious ones (e.g. a weight decay large enough to swamp the
// gradient signal).
std::vector<std::string> validate(const TrainConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
// Strict: unknown or ill-typed fields raise ConfigError naming the field.
TrainConfig train_config_from_json(const nlohmann::json& obj);

struct NamedParam {
  std::string name;
  Tensor tensor;
  double lr_scale = 1.0;
};

// Keeps the first max_len tokens of every layer; pass-through when the
// sequence already fits (only the pass-through path carries gradients).
Tensor truncate_seq(const Tensor& stack, std::size_t max_len);

// One trained classifier: either the co-attention model or a baseline.
class Model {
 public:
  Model(const TrainConfig& cfg, const DatasetHeader& header);

  // full forward pass for one item; 1 x K class probabilities
  Tensor item_probs(const LoadedItem& item) const;

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  std::size_t scalar_count() const;

  const TrainConfig& config() const { return cfg_; }
  const DatasetHeader& data_header() const { return header_; }

  std::size_t feature_width() const { return feature_width_; }

 private:
  TrainConfig cfg_;
  DatasetHeader header_;
  std::size_t feature_width_ = 0;
  std::vector<NamedParam> params_;

  std::optional<ScalarMixParams> mix_;
  std::optional<BiLstmParams> lstm_;
  std::optional<SeqProjectionParams> proj_;
  std::optional<SeqProjectionParams> text_ff_;  // replaces lstm_+proj_ when !recurrent
  std::optional<ImageAdapterParams> adapter_;
  std::optional<CoAttentionParams> coattn_;
  std::optional<BilinearFusionParams> bilinear_;
  std::optional<DotFusionParams> dot_;
  std::optional<ClassifierHead> head_;

  Tensor text_feature(const LoadedItem& item) const;   // baselines: 1 x d_t
  Tensor image_feature(const LoadedItem& item) const;  // baselines: 1 x d_img
};

// ---- optimizer ----

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const std::vector<NamedParam>& params);

// Decoupled weight decay, bias-corrected moments, per-group learning rates.
// Throws NumericError naming the parameter on a non-finite gradient.
void adam_step(std::vector<NamedParam>& params, AdamState& state, const TrainConfig& cfg);

// ---- batching ----

struct BucketKey {
  std::size_t length = 0;
  std::string id;
};

// Indices sorted by (length, id), chunked, with the chunk order shuffled.
// Every index appears exactly once; the trailing partial batch is kept.
std::vector<std::vector<std::size_t>> bucket_batches(const std::vector<BucketKey>& keys,
                                                     std::size_t batch_size,
                                                     std::uint64_t seed);

// ---- evaluation ----

struct ItemEval {
  std::string id;
  int label = 0;
  int predicted = 0;
  double loss = 0.0;
  bool has_description = false;
  std::vector<double> probs;
};

struct EvalResult {
  double macro_f1 = 0.0;
  double mean_loss = 0.0;
  std::vector<ItemEval> items;
};

EvalResult evaluate(const Model& model, const LoadedDataset& data);

// ---- checkpoints and the loop ----

struct Checkpoint {
  TrainConfig config;
  DatasetHeader header;
  int epoch = 0;  // 0 marks the untrained initialization
  double val_macro_f1 = 0.0;
  std::vector<std::pair<std::string, Tensor>> params;
};

Checkpoint snapshot(const Model& model, int epoch, double val_macro_f1);
Model model_from(const Checkpoint& checkpoint);

// Directory layout: checkpoint.json plus params/<name>.mmeb (64-bit payloads,
// so reloading reproduces training bit for bit).
void save_checkpoint(const Checkpoint& checkpoint, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
  double seconds = 0.0;
};

void write_train_log(const std::vector<EpochLog>& log, const std::string& path);

struct TrainResult {
  Checkpoint best;  // highest validation macro-F1, earliest epoch on ties
  std::vector<EpochLog> log;
  std::vector<std::string> warnings;
  bool diverged = false;
};

TrainResult train(const TrainConfig& cfg, const LoadedDataset& train_data,
                  const LoadedDataset& val_data);

}  // namespace mmf
