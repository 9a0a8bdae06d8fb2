#include "mmf/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "mmf/analysis.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mmf {

namespace {

std::string base_tag(const Checkpoint& c, std::size_t index) {
  return std::to_string(index) + ":" + to_string(c.config.variant) + "/seed" +
         std::to_string(c.config.seed) + "/epoch" + std::to_string(c.epoch);
}

void check_widths(const StackedSet& set, const char* where) {
  std::size_t width = set.n_models * static_cast<std::size_t>(set.k_classes);
  for (const StackedItem& item : set.items)
    if (item.features.size() != width)
      throw DataError(std::string(where) + ": item " + item.id + " carries " +
                      std::to_string(item.features.size()) + " features, expected " +
                      std::to_string(width));
}

}  // namespace

StackedSet collect_probs(const std::vector<Checkpoint>& checkpoints,
                         const LoadedDataset& data) {
  if (checkpoints.empty()) throw ConfigError("collect_probs: no checkpoints given");
  if (data.items.empty()) throw DataError("collect_probs: empty dataset");

  StackedSet out;
  out.n_models = checkpoints.size();
  out.k_classes = checkpoints.front().header.k_classes;
  for (std::size_t m = 0; m < checkpoints.size(); ++m) {
    if (checkpoints[m].header.k_classes != out.k_classes)
      throw DataError("checkpoint " + std::to_string(m) + " predicts " +
                      std::to_string(checkpoints[m].header.k_classes) +
                      " classes, expected " + std::to_string(out.k_classes));
    out.model_tags.push_back(base_tag(checkpoints[m], m));
  }

  out.items.reserve(data.items.size());
  for (const LoadedItem& item : data.items) {
    StackedItem s;
    s.id = item.id;
    s.label = item.label;
    s.has_description = item.has_description;
    s.features.reserve(out.n_models * static_cast<std::size_t>(out.k_classes));
    out.items.push_back(std::move(s));
  }

  NoGradScope frozen;
  for (const Checkpoint& c : checkpoints) {
    Model model = model_from(c);
    for (std::size_t i = 0; i < data.items.size(); ++i) {
      Tensor probs = model.item_probs(data.items[i]);
      const std::vector<double>& p = probs.data();
      double sum = std::accumulate(p.begin(), p.end(), 0.0);
      if (std::abs(sum - 1.0) > 1e-6)
        throw NumericError("base model emitted a probability row summing to " +
                           std::to_string(sum) + " for item " + data.items[i].id);
      out.items[i].features.insert(out.items[i].features.end(), p.begin(), p.end());
    }
  }
  return out;
}

std::pair<StackedSet, StackedSet> split_meta(const StackedSet& stacked, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction > 0.0) || !(fraction < 1.0))
    throw ConfigError("meta split fraction must lie strictly between 0 and 1");
  check_widths(stacked, "split_meta");

  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < stacked.items.size(); ++i)
    by_label[stacked.items[i].label].push_back(i);

  Rng rng(seed);
  std::vector<bool> held(stacked.items.size(), false);
  for (auto& [label, indices] : by_label) {
    std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
      return stacked.items[a].id < stacked.items[b].id;
    });
    rng.shuffle(indices);
    std::size_t take = static_cast<std::size_t>(fraction * static_cast<double>(indices.size()));
    if (take == 0 && indices.size() >= 2) take = 1;
    for (std::size_t j = 0; j < take; ++j) held[indices[j]] = true;
  }

  StackedSet train, held_out;
  train.n_models = held_out.n_models = stacked.n_models;
  train.k_classes = held_out.k_classes = stacked.k_classes;
  train.model_tags = held_out.model_tags = stacked.model_tags;
  for (std::size_t i = 0; i < stacked.items.size(); ++i)
    (held[i] ? held_out : train).items.push_back(stacked.items[i]);
  return {std::move(train), std::move(held_out)};
}

json to_json(const MetaConfig& cfg) {
  return json{{"hidden", cfg.hidden},       {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size}, {"base_lr", cfg.base_lr},
              {"weight_decay", cfg.weight_decay}, {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},         {"adam_eps", cfg.adam_eps},
              {"seed", cfg.seed}};
}

MetaConfig meta_config_from_json(const json& obj) {
  if (!obj.is_object()) throw ConfigError("meta config must be a JSON object");
  static const char* known[] = {"hidden",       "epochs", "batch_size", "base_lr",
                                "weight_decay", "beta1",  "beta2",      "adam_eps",
                                "seed"};
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok |= it.key() == k;
    if (!ok) throw ConfigError("unknown meta config field '" + it.key() + "'");
  }
  MetaConfig cfg;
  auto read = [&](const char* key, auto& into) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
      into = it->template get<std::decay_t<decltype(into)>>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("meta config field '") + key + "' has the wrong type");
    }
  };
  read("hidden", cfg.hidden);
  read("epochs", cfg.epochs);
  read("batch_size", cfg.batch_size);
  read("base_lr", cfg.base_lr);
  read("weight_decay", cfg.weight_decay);
  read("beta1", cfg.beta1);
  read("beta2", cfg.beta2);
  read("adam_eps", cfg.adam_eps);
  read("seed", cfg.seed);
  return cfg;
}

namespace {

ClassifierHead head_from(const MetaCheckpoint& meta) {
  ClassifierHead head;
  for (const auto& [name, tensor] : meta.params) {
    if (name == "meta.w_hidden") head.w_hidden = tensor;
    else if (name == "meta.b_hidden") head.b_hidden = tensor;
    else if (name == "meta.w_out") head.w_out = tensor;
    else if (name == "meta.b_out") head.b_out = tensor;
    else throw DataError("unexpected meta parameter '" + name + "'");
  }
  if (!head.w_hidden.defined() || !head.b_hidden.defined() || !head.w_out.defined() ||
      !head.b_out.defined())
    throw DataError("meta checkpoint is missing parameters");
  return head;
}

EvalResult eval_stacked(const ClassifierHead& head, const StackedSet& set) {
  if (set.items.empty()) throw DataError("ensemble evaluation: empty stacked set");
  check_widths(set, "ensemble evaluation");
  NoGradScope frozen;

  EvalResult result;
  std::vector<int> truth, predicted;
  double loss_total = 0.0;
  for (const StackedItem& item : set.items) {
    Tensor feature = Tensor::from_data({1, item.features.size()}, item.features);
    Tensor probs = classify(feature, head);
    const std::vector<double>& p = probs.data();
    ItemEval ev;
    ev.id = item.id;
    ev.label = item.label;
    ev.has_description = item.has_description;
    ev.probs = p;
    ev.predicted = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    ev.loss = -std::log(p[static_cast<std::size_t>(item.label)]);
    loss_total += ev.loss;
    truth.push_back(item.label);
    predicted.push_back(ev.predicted);
    result.items.push_back(std::move(ev));
  }
  result.mean_loss = loss_total / static_cast<double>(set.items.size());
  result.macro_f1 = macro_f1(truth, predicted, set.k_classes);
  return result;
}

MetaCheckpoint snapshot_meta(const MetaConfig& cfg, const StackedSet& like,
                             const std::vector<NamedParam>& params, std::size_t hidden,
                             int epoch, double f1) {
  MetaCheckpoint c;
  c.config = cfg;
  c.n_models = like.n_models;
  c.k_classes = like.k_classes;
  c.hidden = hidden;
  c.epoch = epoch;
  c.val_macro_f1 = f1;
  c.model_tags = like.model_tags;
  for (const NamedParam& p : params) c.params.emplace_back(p.name, p.tensor.deep_copy());
  return c;
}

}  // namespace

MetaCheckpoint train_meta(const StackedSet& stacked_train, const StackedSet& stacked_val,
                          const MetaConfig& cfg) {
  if (stacked_train.items.empty()) throw DataError("train_meta: empty training set");
  if (stacked_val.items.empty()) throw DataError("train_meta: empty validation set");
  if (stacked_train.k_classes < 2) throw DataError("train_meta: need at least two classes");
  if (stacked_val.k_classes != stacked_train.k_classes ||
      stacked_val.n_models != stacked_train.n_models)
    throw DataError("train_meta: validation stack does not match the training stack");
  if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(cfg.base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  check_widths(stacked_train, "train_meta");
  check_widths(stacked_val, "train_meta");

  const std::size_t width =
      stacked_train.n_models * static_cast<std::size_t>(stacked_train.k_classes);
  const std::size_t hidden = cfg.hidden ? cfg.hidden : width;

  Rng rng(cfg.seed);
  ClassifierHead head = ClassifierHead::init(
      width, hidden, static_cast<std::size_t>(stacked_train.k_classes), rng);
  std::vector<NamedParam> params{{"meta.w_hidden", head.w_hidden, 1.0},
                                 {"meta.b_hidden", head.b_hidden, 1.0},
                                 {"meta.w_out", head.w_out, 1.0},
                                 {"meta.b_out", head.b_out, 1.0}};
  AdamState state = make_adam_state(params);

  TrainConfig opt;  // optimizer fields only
  opt.base_lr = cfg.base_lr;
  opt.weight_decay = cfg.weight_decay;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.adam_eps = cfg.adam_eps;

  MetaCheckpoint best = snapshot_meta(cfg, stacked_train, params, hidden, 0,
                                      eval_stacked(head, stacked_val).macro_f1);

  std::vector<std::size_t> order(stacked_train.items.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffler(cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch));
    shuffler.shuffle(order);
    bool diverged = false;
    for (std::size_t start = 0; start < order.size() && !diverged;
         start += cfg.batch_size) {
      std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      for (NamedParam& p : params) p.tensor.zero_grad();
      try {
        Tensor acc;
        for (std::size_t j = start; j < stop; ++j) {
          const StackedItem& item = stacked_train.items[order[j]];
          Tensor feature = Tensor::from_data({1, item.features.size()}, item.features);
          Tensor loss = cross_entropy(classify(feature, head),
                                      static_cast<std::size_t>(item.label));
          acc = acc.defined() ? add(acc, loss) : loss;
        }
        Tensor batch_loss = scalar_mul(acc, 1.0 / static_cast<double>(stop - start));
        if (!std::isfinite(batch_loss.value()))
          throw NumericError("meta loss became non-finite");
        backward(batch_loss);
        adam_step(params, state, opt);
      } catch (const NumericError&) {
        diverged = true;  // keep the best state found so far
      }
    }
    if (diverged) break;
    double f1 = eval_stacked(head, stacked_val).macro_f1;
    if (f1 > best.val_macro_f1)
      best = snapshot_meta(cfg, stacked_train, params, hidden, epoch, f1);
  }
  return best;
}

EvalResult predict_ensemble(const MetaCheckpoint& meta, const StackedSet& items) {
  if (items.n_models != meta.n_models || items.k_classes != meta.k_classes)
    throw DataError("stacked set was built for " + std::to_string(items.n_models) +
                    " models x " + std::to_string(items.k_classes) +
                    " classes, the meta network for " + std::to_string(meta.n_models) +
                    " x " + std::to_string(meta.k_classes));
  return eval_stacked(head_from(meta), items);
}

void save_meta(const MetaCheckpoint& meta, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "params");
  json params = json::array();
  for (const auto& [name, tensor] : meta.params) {
    std::string file = "params/" + name + ".mmeb";
    BlobArray array;
    array.dims = tensor.rank() >= 2 ? tensor.shape()
                                    : std::vector<std::size_t>{1, tensor.size()};
    array.values = tensor.data();
    write_blob_file((fs::path(dir) / file).string(), array, BlobDtype::kFloat64);
    params.push_back({{"name", name}, {"shape", tensor.shape()}, {"file", file}});
  }
  json root{{"config", to_json(meta.config)},
            {"n_models", meta.n_models},
            {"k_classes", meta.k_classes},
            {"hidden", meta.hidden},
            {"epoch", meta.epoch},
            {"val_macro_f1", meta.val_macro_f1},
            {"model_tags", meta.model_tags},
            {"params", params}};
  std::ofstream out(fs::path(dir) / "meta.json");
  if (!out) throw DataError("cannot write meta checkpoint to " + dir);
  out << root.dump(2) << "\n";
}

MetaCheckpoint load_meta(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "meta.json");
  if (!in) throw DataError("cannot open meta.json under " + dir);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw DataError(std::string("meta.json is not valid JSON: ") + e.what());
  }
  MetaCheckpoint meta;
  try {
    meta.config = meta_config_from_json(root.at("config"));
    meta.n_models = root.at("n_models").get<std::size_t>();
    meta.k_classes = root.at("k_classes").get<int>();
    meta.hidden = root.at("hidden").get<std::size_t>();
    meta.epoch = root.at("epoch").get<int>();
    meta.val_macro_f1 = root.at("val_macro_f1").get<double>();
    meta.model_tags = root.at("model_tags").get<std::vector<std::string>>();
    for (const json& entry : root.at("params")) {
      std::string name = entry.at("name").get<std::string>();
      std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
      BlobArray array = read_blob_file((fs::path(dir) / entry.at("file").get<std::string>()).string());
      std::size_t expect = 1;
      for (std::size_t d : shape) expect *= d;
      if (array.values.size() != expect)
        throw DataError("meta parameter '" + name + "' holds " +
                        std::to_string(array.values.size()) + " values, expected " +
                        std::to_string(expect));
      meta.params.emplace_back(name, Tensor::from_data(shape, std::move(array.values)));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed meta.json: ") + e.what());
  }
  head_from(meta);  // completeness check
  return meta;
}

void write_stacked(const StackedSet& stacked, const std::string& dir) {
  if (stacked.items.empty()) throw DataError("write_stacked: empty stacked set");
  check_widths(stacked, "write_stacked");
  fs::create_directories(dir);

  const std::size_t width =
      stacked.n_models * static_cast<std::size_t>(stacked.k_classes);
  BlobArray array;
  array.dims = {stacked.items.size(), width};
  array.values.reserve(stacked.items.size() * width);
  json index_items = json::array();
  for (const StackedItem& item : stacked.items) {
    array.values.insert(array.values.end(), item.features.begin(), item.features.end());
    index_items.push_back({{"id", item.id},
                           {"label", item.label},
                           {"has_description", item.has_description}});
  }
  write_blob_file((fs::path(dir) / "stacked.mmeb").string(), array, BlobDtype::kFloat64);

  json root{{"n_models", stacked.n_models},
            {"k_classes", stacked.k_classes},
            {"model_tags", stacked.model_tags},
            {"features", "stacked.mmeb"},
            {"items", index_items}};
  std::ofstream out(fs::path(dir) / "stacked.json");
  if (!out) throw DataError("cannot write stacked index to " + dir);
  out << root.dump(2) << "\n";
}

StackedSet read_stacked(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "stacked.json");
  if (!in) throw DataError("cannot open stacked.json under " + dir);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw DataError(std::string("stacked.json is not valid JSON: ") + e.what());
  }

  StackedSet stacked;
  BlobArray array;
  try {
    stacked.n_models = root.at("n_models").get<std::size_t>();
    stacked.k_classes = root.at("k_classes").get<int>();
    stacked.model_tags = root.at("model_tags").get<std::vector<std::string>>();
    array = read_blob_file((fs::path(dir) / root.at("features").get<std::string>()).string());
    for (const json& entry : root.at("items")) {
      StackedItem item;
      item.id = entry.at("id").get<std::string>();
      item.label = entry.at("label").get<int>();
      item.has_description = entry.at("has_description").get<bool>();
      stacked.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed stacked.json: ") + e.what());
  }

  const std::size_t width =
      stacked.n_models * static_cast<std::size_t>(stacked.k_classes);
  if (array.dims.size() != 2 || array.dims[0] != stacked.items.size() ||
      array.dims[1] != width)
    throw DataError("stacked feature blob shape does not match the index");
  for (std::size_t i = 0; i < stacked.items.size(); ++i)
    stacked.items[i].features.assign(array.values.begin() + static_cast<std::ptrdiff_t>(i * width),
                                     array.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  return stacked;
}

}  // namespace mmf
