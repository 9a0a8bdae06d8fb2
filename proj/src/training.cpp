#include "mmf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "mmf/analysis.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mmf {

std::string to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kCoAttention: return "coattention";
    case ModelVariant::kConcatBaseline: return "concat";
    case ModelVariant::kBilinearBaseline: return "bilinear";
    case ModelVariant::kDotBaseline: return "dot";
  }
  return "coattention";
}

ModelVariant model_variant_from(const std::string& name) {
  if (name == "coattention") return ModelVariant::kCoAttention;
  if (name == "concat") return ModelVariant::kConcatBaseline;
  if (name == "bilinear") return ModelVariant::kBilinearBaseline;
  if (name == "dot") return ModelVariant::kDotBaseline;
  throw ConfigError("unknown model variant '" + name +
                    "' (expected coattention, concat, bilinear or dot)");
}

std::vector<std::string> validate(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (cfg.max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
  if (!(cfg.base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(cfg.adapter_lr_scale > 0.0)) throw ConfigError("adapter_lr_scale must be positive");
  if (cfg.weight_decay < 0.0 || cfg.weight_decay >= 1.0)
    throw ConfigError("weight_decay must lie in [0, 1)");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(cfg.adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (cfg.variant == ModelVariant::kCoAttention) {
    if (cfg.common_dim == 0) throw ConfigError("common_dim must be positive");
    if (cfg.recurrent_encoder && cfg.hidden == 0)
      throw ConfigError("hidden must be positive when the recurrent encoder is on");
  }

  std::vector<std::string> warnings;
  if (cfg.weight_decay > 0.1)
    warnings.push_back("weight decay " + std::to_string(cfg.weight_decay) +
                       " is large for decoupled decay and tends to pull the weights to zero "
                       "faster than the gradient can move them; 0.01 or less trains normally");
  if (cfg.epochs == 0)
    warnings.push_back("zero epochs requested: the run returns the untrained initialization");
  return warnings;
}

// ---- config (de)serialization ----

json to_json(const TrainConfig& cfg) {
  return json{{"variant", to_string(cfg.variant)},
              {"attention", to_string(cfg.attention)},
              {"weighted_layer_mix", cfg.weighted_layer_mix},
              {"recurrent_encoder", cfg.recurrent_encoder},
              {"hidden", cfg.hidden},
              {"common_dim", cfg.common_dim},
              {"attn_dim", cfg.attn_dim},
              {"head_hidden", cfg.head_hidden},
              {"bilinear_width", cfg.bilinear_width},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"max_seq_len", cfg.max_seq_len},
              {"base_lr", cfg.base_lr},
              {"adapter_lr_scale", cfg.adapter_lr_scale},
              {"weight_decay", cfg.weight_decay},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"adam_eps", cfg.adam_eps},
              {"seed", cfg.seed}};
}

namespace {

template <typename T>
void read_field(const json& obj, const char* key, T& into) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    into = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

}  // namespace

TrainConfig train_config_from_json(const json& obj) {
  if (!obj.is_object()) throw ConfigError("training config must be a JSON object");
  static const char* known[] = {
      "variant",     "attention",      "weighted_layer_mix", "recurrent_encoder",
      "hidden",      "common_dim",     "attn_dim",           "head_hidden",
      "bilinear_width", "epochs",      "batch_size",         "max_seq_len",
      "base_lr",     "adapter_lr_scale", "weight_decay",     "beta1",
      "beta2",       "adam_eps",       "seed"};
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok |= it.key() == k;
    if (!ok) throw ConfigError("unknown training config field '" + it.key() + "'");
  }

  TrainConfig cfg;
  std::string variant = to_string(cfg.variant), attention = to_string(cfg.attention);
  read_field(obj, "variant", variant);
  read_field(obj, "attention", attention);
  cfg.variant = model_variant_from(variant);
  cfg.attention = attention_mode_from(attention);
  read_field(obj, "weighted_layer_mix", cfg.weighted_layer_mix);
  read_field(obj, "recurrent_encoder", cfg.recurrent_encoder);
  read_field(obj, "hidden", cfg.hidden);
  read_field(obj, "common_dim", cfg.common_dim);
  read_field(obj, "attn_dim", cfg.attn_dim);
  read_field(obj, "head_hidden", cfg.head_hidden);
  read_field(obj, "bilinear_width", cfg.bilinear_width);
  read_field(obj, "epochs", cfg.epochs);
  read_field(obj, "batch_size", cfg.batch_size);
  read_field(obj, "max_seq_len", cfg.max_seq_len);
  read_field(obj, "base_lr", cfg.base_lr);
  read_field(obj, "adapter_lr_scale", cfg.adapter_lr_scale);
  read_field(obj, "weight_decay", cfg.weight_decay);
  read_field(obj, "beta1", cfg.beta1);
  read_field(obj, "beta2", cfg.beta2);
  read_field(obj, "adam_eps", cfg.adam_eps);
  read_field(obj, "seed", cfg.seed);
  return cfg;
}

// ---- optimizer ----

AdamState make_adam_state(const std::vector<NamedParam>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const NamedParam& p : params) {
    state.m.emplace_back(p.tensor.size(), 0.0);
    state.v.emplace_back(p.tensor.size(), 0.0);
  }
  return state;
}

void adam_step(std::vector<NamedParam>& params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.size() != params.size())
    throw ConfigError("adam state does not match the parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    NamedParam& p = params[i];
    std::vector<double>& data = p.tensor.data();
    const double lr = cfg.base_lr * p.lr_scale;
    const bool has_grad = p.tensor.has_grad();
    const std::vector<double>* grad = has_grad ? &p.tensor.grad() : nullptr;
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];

    for (std::size_t j = 0; j < data.size(); ++j) {
      double g = grad ? (*grad)[j] : 0.0;
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in " + p.name + "[" + std::to_string(j) + "]");
      if (cfg.weight_decay != 0.0) data[j] -= lr * cfg.weight_decay * data[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      double m_hat = m[j] / bc1;
      double v_hat = v[j] / bc2;
      data[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

// ---- batching ----

std::vector<std::vector<std::size_t>> bucket_batches(const std::vector<BucketKey>& keys,
                                                     std::size_t batch_size,
                                                     std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (keys[a].length != keys[b].length) return keys[a].length < keys[b].length;
    return keys[a].id < keys[b].id;
  });

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::size_t stop = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + stop);
  }
  Rng rng(seed);
  rng.shuffle(batches);
  return batches;
}

// ---- evaluation ----

EvalResult evaluate(const Model& model, const LoadedDataset& data) {
  if (data.items.empty()) throw DataError("evaluate: empty dataset");
  NoGradScope frozen;

  EvalResult result;
  std::vector<int> truth, predicted;
  double loss_total = 0.0;
  for (const LoadedItem& item : data.items) {
    Tensor probs = model.item_probs(item);
    const std::vector<double>& p = probs.data();
    ItemEval ev;
    ev.id = item.id;
    ev.label = item.label;
    ev.has_description = item.has_description;
    ev.probs = p;
    ev.predicted = static_cast<int>(
        std::max_element(p.begin(), p.end()) - p.begin());  // ties -> lowest index
    ev.loss = -std::log(p[static_cast<std::size_t>(item.label)]);
    loss_total += ev.loss;
    truth.push_back(item.label);
    predicted.push_back(ev.predicted);
    result.items.push_back(std::move(ev));
  }
  result.mean_loss = loss_total / static_cast<double>(data.items.size());
  result.macro_f1 = macro_f1(truth, predicted, data.header.k_classes);
  return result;
}

// ---- checkpoints ----

Checkpoint snapshot(const Model& model, int epoch, double val_macro_f1) {
  Checkpoint c;
  c.config = model.config();
  c.header = model.data_header();
  c.epoch = epoch;
  c.val_macro_f1 = val_macro_f1;
  for (const NamedParam& p : model.params())
    c.params.emplace_back(p.name, p.tensor.deep_copy());
  return c;
}

Model model_from(const Checkpoint& checkpoint) {
  Model model(checkpoint.config, checkpoint.header);
  std::vector<NamedParam>& params = model.params();
  if (params.size() != checkpoint.params.size())
    throw DataError("checkpoint holds " + std::to_string(checkpoint.params.size()) +
                    " parameters but the configuration builds " +
                    std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, tensor] = checkpoint.params[i];
    if (params[i].name != name)
      throw DataError("checkpoint parameter '" + name + "' does not match expected '" +
                      params[i].name + "'");
    if (params[i].tensor.shape() != tensor.shape())
      throw DataError("checkpoint parameter '" + name + "' has shape " +
                      shape_str(tensor.shape()) + ", expected " +
                      shape_str(params[i].tensor.shape()));
    params[i].tensor.data() = tensor.data();
  }
  return model;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "params");
  json params = json::array();
  for (const auto& [name, tensor] : checkpoint.params) {
    std::string file = "params/" + name + ".mmeb";
    BlobArray array;
    array.dims = tensor.rank() >= 2 ? tensor.shape()
                                    : std::vector<std::size_t>{1, tensor.size()};
    array.values = tensor.data();
    write_blob_file((fs::path(dir) / file).string(), array, BlobDtype::kFloat64);
    params.push_back({{"name", name}, {"shape", tensor.shape()}, {"file", file}});
  }
  json root{{"config", to_json(checkpoint.config)},
            {"header", header_to_json(checkpoint.header)},
            {"epoch", checkpoint.epoch},
            {"val_macro_f1", checkpoint.val_macro_f1},
            {"params", params}};
  std::ofstream out(fs::path(dir) / "checkpoint.json");
  if (!out) throw DataError("cannot write checkpoint to " + dir);
  out << root.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "checkpoint.json");
  if (!in) throw DataError("cannot open checkpoint.json under " + dir);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint.json is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  try {
    c.config = train_config_from_json(root.at("config"));
    c.header = header_from_json(root.at("header"));
    c.epoch = root.at("epoch").get<int>();
    c.val_macro_f1 = root.at("val_macro_f1").get<double>();
    for (const json& entry : root.at("params")) {
      std::string name = entry.at("name").get<std::string>();
      std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
      std::string file = entry.at("file").get<std::string>();
      BlobArray array = read_blob_file((fs::path(dir) / file).string());
      std::size_t expect = 1;
      for (std::size_t d : shape) expect *= d;
      if (array.values.size() != expect)
        throw DataError("checkpoint parameter '" + name + "' holds " +
                        std::to_string(array.values.size()) + " values, expected " +
                        std::to_string(expect));
      c.params.emplace_back(name, Tensor::from_data(shape, std::move(array.values)));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint.json: ") + e.what());
  }
  return c;
}

// ---- the loop ----

void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log to " + path);
  for (const EpochLog& e : log) {
    json row{{"epoch", e.epoch},
             {"train_loss", e.train_loss},
             {"val_macro_f1", e.val_macro_f1},
             {"seconds", e.seconds}};
    out << row.dump() << "\n";
  }
}

TrainResult train(const TrainConfig& cfg, const LoadedDataset& train_data,
                  const LoadedDataset& val_data) {
  TrainResult result;
  result.warnings = validate(cfg);
  if (train_data.items.empty()) throw DataError("train: empty training set");
  if (val_data.items.empty()) throw DataError("train: empty validation set");

  Model model(cfg, train_data.header);
  std::vector<NamedParam>& params = model.params();
  AdamState state = make_adam_state(params);

  result.best = snapshot(model, 0, evaluate(model, val_data).macro_f1);

  std::vector<BucketKey> keys;
  keys.reserve(train_data.items.size());
  for (const LoadedItem& item : train_data.items) keys.push_back({item.text_len, item.id});

  for (int epoch = 1; epoch <= cfg.epochs && !result.diverged; ++epoch) {
    auto started = std::chrono::steady_clock::now();
    std::vector<std::vector<std::size_t>> batches =
        bucket_batches(keys, cfg.batch_size, cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (const std::vector<std::size_t>& batch : batches) {
      for (NamedParam& p : params) p.tensor.zero_grad();
      try {
        Tensor acc;
        for (std::size_t idx : batch) {
          const LoadedItem& item = train_data.items[idx];
          Tensor loss = cross_entropy(model.item_probs(item),
                                      static_cast<std::size_t>(item.label));
          acc = acc.defined() ? add(acc, loss) : loss;
        }
        Tensor batch_loss = scalar_mul(acc, 1.0 / static_cast<double>(batch.size()));
        double value = batch_loss.value();
        if (!std::isfinite(value))
          throw NumericError("training loss became non-finite");
        backward(batch_loss);
        adam_step(params, state, cfg);
        loss_sum += value * static_cast<double>(batch.size());
        seen += batch.size();
      } catch (const NumericError& e) {
        result.diverged = true;
        result.warnings.push_back("run diverged in epoch " + std::to_string(epoch) + " (" +
                                  e.what() + "); keeping the best checkpoint");
        break;
      }
    }
    if (result.diverged) break;

    EvalResult val = evaluate(model, val_data);
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back({epoch, seen ? loss_sum / static_cast<double>(seen) : 0.0,
                          val.macro_f1, seconds});
    if (val.macro_f1 > result.best.val_macro_f1)
      result.best = snapshot(model, epoch, val.macro_f1);
  }
  return result;
}

}  // namespace mmf
