#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmf/training.hpp"

namespace mmf {

// One item's stacked feature: the concatenated class-probability vectors of
// every base model, in checkpoint-list order.
struct StackedItem {
  std::string id;
  int label = 0;
  bool has_description = true;
  std::vector<double> features;  // n_models * k_classes
};

struct StackedSet {
  std::size_t n_models = 0;
  int k_classes = 0;
  std::vector<std::string> model_tags;  // one human-readable tag per base model
  std::vector<StackedItem> items;
};

// Runs every checkpoint over the dataset and concatenates the probability
// rows. Base-model order follows the checkpoint list. All checkpoints must
// agree on the class count; every K-segment is checked to sum to 1 +- 1e-6.
StackedSet collect_probs(const std::vector<Checkpoint>& checkpoints,
                         const LoadedDataset& data);

// Stratified split of a stacked set; `fraction` of each class (floor, min 1
// when the class has >= 2 items) goes to the second (held-out) part.
std::pair<StackedSet, StackedSet> split_meta(const StackedSet& stacked, double fraction,
                                             std::uint64_t seed);

struct MetaConfig {
  std::size_t hidden = 0;  // 0 -> feature width
  int epochs = 30;
  std::size_t batch_size = 16;
  double base_lr = 0.01;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const MetaConfig& cfg);
MetaConfig meta_config_from_json(const nlohmann::json& obj);

struct MetaCheckpoint {
  MetaConfig config;
  std::size_t n_models = 0;
  int k_classes = 0;
  std::size_t hidden = 0;
  int epoch = 0;  // 0 = untrained initialization
  double val_macro_f1 = 0.0;
  std::vector<std::string> model_tags;
  std::vector<std::pair<std::string, Tensor>> params;  // meta.w_hidden, ...
};

// Feed-forward meta-network (affine -> tanh -> affine -> softmax) trained
// with Adam + cross-entropy on stacked features; keeps the best-val-F1 state.
MetaCheckpoint train_meta(const StackedSet& stacked_train, const StackedSet& stacked_val,
                          const MetaConfig& cfg);

// Forward pass + argmax (ties -> lowest class index) over a stacked set.
EvalResult predict_ensemble(const MetaCheckpoint& meta, const StackedSet& items);

void save_meta(const MetaCheckpoint& meta, const std::string& dir);
MetaCheckpoint load_meta(const std::string& dir);

// Stacked features persist as one rank-2 blob (items x n_models*k_classes)
// plus a JSON index holding ids, labels and the base-model order.
void write_stacked(const StackedSet& stacked, const std::string& dir);
StackedSet read_stacked(const std::string& dir);

}  // namespace mmf
