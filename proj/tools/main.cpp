#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mmf/analysis.hpp"
#include "mmf/ensemble.hpp"
#include "mmf/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mmf;

namespace {

// ---- small shared helpers ----

std::string default_out() {
  const char* env = std::getenv("MMF_RUN_DIR");
  return env && *env ? env : "run";
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    json obj;
    in >> obj;
    return obj;
  } catch (const json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& obj) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << obj.dump(2) << "\n";
}

// Accepts either a manifest file or a dataset directory holding manifest.jsonl.
std::string resolve_manifest(const std::string& data) {
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.jsonl").string();
  return data;
}

// Every command appends what it wrote to <out>/artifacts.json so later
// commands (ensemble in particular) can discover checkpoints by kind.
void add_artifacts(const fs::path& out_dir,
                   const std::vector<std::pair<std::string, std::string>>& entries) {
  fs::path path = out_dir / "artifacts.json";
  json root = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      in >> root;
    } catch (const json::exception&) {
      root = json::object();  // rebuild a broken index rather than fail the run
    }
  }
  if (!root.contains("artifacts") || !root["artifacts"].is_array())
    root["artifacts"] = json::array();
  for (const auto& [kind, rel] : entries) {
    bool present = false;
    for (const json& a : root["artifacts"])
      present |= a.value("kind", "") == kind && a.value("path", "") == rel;
    if (!present) root["artifacts"].push_back({{"kind", kind}, {"path", rel}});
  }
  write_json_file(path, root);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

LoadedDataset load_data_arg(const std::string& data) {
  return load_dataset(resolve_manifest(data));
}

void write_predictions(const EvalResult& result, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write predictions to " + path.string());
  for (const ItemEval& ev : result.items) {
    json row{{"id", ev.id},          {"label", ev.label},
             {"predicted", ev.predicted}, {"loss", ev.loss},
             {"has_description", ev.has_description}, {"probs", ev.probs}};
    out << row.dump() << "\n";
  }
}

std::vector<ItemEval> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions file " + path);
  std::vector<ItemEval> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
      ItemEval ev;
      ev.id = row.at("id").get<std::string>();
      ev.label = row.at("label").get<int>();
      ev.predicted = row.at("predicted").get<int>();
      ev.loss = row.at("loss").get<double>();
      ev.has_description = row.at("has_description").get<bool>();
      if (row.contains("probs")) ev.probs = row["probs"].get<std::vector<double>>();
      items.push_back(std::move(ev));
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": bad prediction row: " + e.what());
    }
  }
  if (items.empty()) throw DataError(path + " holds no prediction rows");
  return items;
}

// ---- subcommand option bags ----

struct SynthArgs {
  std::string config, out;
  std::size_t count = 64;
  std::int64_t seed = -1;  // <0: keep config value
};

struct PrepArgs {
  std::string manifest, out;
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
  std::size_t bucket_width = 5;
};

struct TrainArgs {
  std::string config, data, val, out;
  std::string variant, attention;
  std::int64_t epochs = -1, seed = -1;
  double lr = 0.0, val_fraction = 0.2;
  std::int64_t split_seed = -1;  // <0: follow the training seed
  bool no_bilstm = false, top_layer_only = false;
};

struct EvalArgs {
  std::string checkpoint, data, out;
};

struct AblateArgs {
  std::string config, data, out;
  double val_fraction = 0.2;
  std::int64_t split_seed = -1;
};

struct EnsembleArgs {
  std::vector<std::string> checkpoints;
  std::string data, out, meta_config;
  double meta_fraction = 0.5;
  std::int64_t seed = -1;
};

struct AnalyzeArgs {
  std::string predictions, manifest, out;
  std::size_t top_errors = 10;
  std::size_t bucket_width = 5;
};

struct GradcheckArgs {
  std::uint64_t seed = 7;
  double tolerance = 1e-4;
};

// ---- subcommand bodies ----

TrainConfig resolve_train_config(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = train_config_from_json(read_json_file(a.config));
  if (!a.variant.empty()) cfg.variant = model_variant_from(a.variant);
  if (!a.attention.empty()) cfg.attention = attention_mode_from(a.attention);
  if (a.no_bilstm) cfg.recurrent_encoder = false;
  if (a.top_layer_only) cfg.weighted_layer_mix = false;
  if (a.epochs >= 0) cfg.epochs = static_cast<int>(a.epochs);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.lr > 0.0) cfg.base_lr = a.lr;
  return cfg;
}

// Splits one manifest into loaded train/val sets, or loads both directly
// when a separate validation manifest is given.
std::pair<LoadedDataset, LoadedDataset> load_split(const std::string& data,
                                                   const std::string& val,
                                                   double val_fraction,
                                                   std::uint64_t split_seed) {
  if (!val.empty())
    return {load_data_arg(data), load_data_arg(val)};
  std::string manifest_path = resolve_manifest(data);
  ManifestData manifest = read_manifest(manifest_path);
  SplitResult split = split_train_val(manifest.items, val_fraction, split_seed);
  print_warnings(split.warnings);
  std::string base = fs::path(manifest_path).parent_path().string();
  return {load_items(manifest.header, split.train, base),
          load_items(manifest.header, split.validation, base)};
}

int cmd_synth(const SynthArgs& a) {
  SyntheticConfig cfg;
  if (!a.config.empty()) cfg = synth_config_from_json(read_json_file(a.config));
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  validate(cfg);

  SyntheticDataset ds = synth_generate(cfg, a.count);
  fs::path out = a.out.empty() ? fs::path(default_out()) / "dataset" : fs::path(a.out);
  write_dataset(ds, out.string());
  write_json_file(out / "synth_config.json", to_json(cfg));
  add_artifacts(out, {{"manifest", "manifest.jsonl"}, {"synth_config", "synth_config.json"}});
  std::cout << "wrote " << ds.items.size() << " items (" << cfg.k_classes
            << " classes) to " << out.string() << "\n";
  return 0;
}

int cmd_prep(const PrepArgs& a) {
  std::string manifest_path = resolve_manifest(a.manifest);
  ManifestData manifest = read_manifest(manifest_path);
  fs::path src_dir = fs::path(manifest_path).parent_path();
  fs::path out = a.out.empty() ? fs::path(default_out()) / "prep" : fs::path(a.out);

  ManifestData cleaned = manifest;
  for (ItemRecord& item : cleaned.items) {
    item.description = normalize_description(item.description);
    item.has_description = item.description.has_value();
    build_corpus_text(item.title, item.description);  // rejects empty titles early
    item.title = clean_text(item.title);
    // emitted manifests may land anywhere, so blob paths become absolute
    item.text_ref.path = fs::absolute(src_dir / item.text_ref.path).lexically_normal().string();
    item.image_ref.path = fs::absolute(src_dir / item.image_ref.path).lexically_normal().string();
  }

  SplitResult split = split_train_val(cleaned.items, a.val_fraction, a.seed);
  print_warnings(split.warnings);

  fs::create_directories(out);
  write_manifest(cleaned, (out / "cleaned.jsonl").string());
  write_manifest({cleaned.header, split.train}, (out / "train.jsonl").string());
  write_manifest({cleaned.header, split.validation}, (out / "val.jsonl").string());

  std::ofstream hist(out / "histogram.csv");
  if (!hist) throw DataError("cannot write histogram.csv under " + out.string());
  hist << "lo,hi,count\n";
  for (const HistBucket& b : text_length_histogram(cleaned.items, a.bucket_width))
    hist << b.lo << "," << b.hi << "," << b.count << "\n";

  add_artifacts(out, {{"cleaned_manifest", "cleaned.jsonl"},
                      {"train_manifest", "train.jsonl"},
                      {"val_manifest", "val.jsonl"},
                      {"length_histogram", "histogram.csv"}});
  std::cout << "cleaned " << cleaned.items.size() << " items: " << split.train.size()
            << " train / " << split.validation.size() << " val -> " << out.string() << "\n";
  return 0;
}

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = resolve_train_config(a);
  std::uint64_t split_seed =
      a.split_seed >= 0 ? static_cast<std::uint64_t>(a.split_seed) : cfg.seed;
  auto [train_set, val_set] = load_split(a.data, a.val, a.val_fraction, split_seed);

  TrainResult result = train(cfg, train_set, val_set);
  print_warnings(result.warnings);

  fs::path out = a.out.empty() ? fs::path(default_out()) / "train" : fs::path(a.out);
  fs::create_directories(out);
  write_json_file(out / "config.json", to_json(cfg));
  save_checkpoint(result.best, (out / "checkpoint").string());
  write_train_log(result.log, (out / "train_log.jsonl").string());
  write_json_file(out / "summary.json",
                  json{{"best_epoch", result.best.epoch},
                       {"best_val_macro_f1", result.best.val_macro_f1},
                       {"epochs_run", result.log.size()},
                       {"diverged", result.diverged},
                       {"warnings", result.warnings}});
  add_artifacts(out, {{"config", "config.json"},
                      {"checkpoint", "checkpoint"},
                      {"train_log", "train_log.jsonl"},
                      {"summary", "summary.json"}});
  std::cout << "best val macro-F1 " << result.best.val_macro_f1 << " at epoch "
            << result.best.epoch << (result.diverged ? " (diverged)" : "") << " -> "
            << out.string() << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  Checkpoint checkpoint = load_checkpoint(a.checkpoint);
  Model model = model_from(checkpoint);
  LoadedDataset data = load_data_arg(a.data);
  EvalResult result = evaluate(model, data);

  fs::path out = a.out.empty() ? fs::path(default_out()) / "eval" : fs::path(a.out);
  fs::create_directories(out);
  std::vector<int> truth, predicted;
  for (const ItemEval& ev : result.items) {
    truth.push_back(ev.label);
    predicted.push_back(ev.predicted);
  }
  write_json_file(out / "metrics.json",
                  json{{"macro_f1", result.macro_f1},
                       {"mean_loss", result.mean_loss},
                       {"items", result.items.size()},
                       {"per_class_f1", per_class_f1(truth, predicted, data.header.k_classes)}});
  write_predictions(result, out / "predictions.jsonl");
  add_artifacts(out, {{"metrics", "metrics.json"}, {"predictions", "predictions.jsonl"}});
  std::cout << "macro-F1 " << result.macro_f1 << " mean loss " << result.mean_loss
            << " over " << result.items.size() << " items -> " << out.string() << "\n";
  return 0;
}

int cmd_ablate(const AblateArgs& a) {
  TrainArgs base_args;
  base_args.config = a.config;
  TrainConfig base = resolve_train_config(base_args);
  base.variant = ModelVariant::kCoAttention;  // the grid only makes sense here
  base.attention = AttentionMode::kBoth;
  base.weighted_layer_mix = true;
  base.recurrent_encoder = true;

  std::uint64_t split_seed =
      a.split_seed >= 0 ? static_cast<std::uint64_t>(a.split_seed) : base.seed;
  auto [train_set, val_set] = load_split(a.data, "", a.val_fraction, split_seed);

  struct Row {
    std::string name;
    TrainConfig cfg;
  };
  std::vector<Row> rows;
  rows.push_back({"full", base});
  {
    TrainConfig c = base;
    c.weighted_layer_mix = false;
    rows.push_back({"top_layer_only", c});
  }
  {
    TrainConfig c = base;
    c.recurrent_encoder = false;
    rows.push_back({"no_bilstm", c});
  }
  {
    TrainConfig c = base;
    c.attention = AttentionMode::kImageOnly;
    rows.push_back({"image_attention_only", c});
  }
  {
    TrainConfig c = base;
    c.attention = AttentionMode::kTextOnly;
    rows.push_back({"text_attention_only", c});
  }

  fs::path out = a.out.empty() ? fs::path(default_out()) / "ablate" : fs::path(a.out);
  fs::create_directories(out);
  std::ofstream csv(out / "ablation.csv");
  if (!csv) throw DataError("cannot write ablation.csv under " + out.string());
  csv << "configuration,val_macro_f1,parameters,best_epoch\n";
  json summary = json::array();
  for (const Row& row : rows) {
    TrainResult result = train(row.cfg, train_set, val_set);
    print_warnings(result.warnings);
    Model best = model_from(result.best);
    csv << row.name << "," << json(result.best.val_macro_f1).dump() << ","
        << best.scalar_count() << "," << result.best.epoch << "\n";
    summary.push_back({{"configuration", row.name},
                       {"val_macro_f1", result.best.val_macro_f1},
                       {"parameters", best.scalar_count()},
                       {"best_epoch", result.best.epoch},
                       {"diverged", result.diverged}});
    std::cout << row.name << ": val macro-F1 " << result.best.val_macro_f1 << "\n";
  }
  write_json_file(out / "ablation.json", summary);
  add_artifacts(out, {{"ablation_table", "ablation.csv"}, {"ablation_summary", "ablation.json"}});
  std::cout << "ablation grid -> " << out.string() << "\n";
  return 0;
}

// A checkpoint argument may be the checkpoint directory itself or a run
// directory whose artifacts.json names one.
std::string resolve_checkpoint(const std::string& path) {
  if (fs::exists(fs::path(path) / "checkpoint.json")) return path;
  fs::path index = fs::path(path) / "artifacts.json";
  if (fs::exists(index)) {
    json root = read_json_file(index.string());
    for (const json& a : root.value("artifacts", json::array()))
      if (a.value("kind", "") == "checkpoint")
        return (fs::path(path) / a.value("path", "")).string();
  }
  throw DataError(path + " is neither a checkpoint directory nor a run with one");
}

int cmd_ensemble(const EnsembleArgs& a) {
  if (a.checkpoints.size() < 2)
    throw ConfigError("ensemble needs at least two --checkpoints");
  std::vector<Checkpoint> bases;
  for (const std::string& path : a.checkpoints)
    bases.push_back(load_checkpoint(resolve_checkpoint(path)));

  LoadedDataset data = load_data_arg(a.data);
  StackedSet stacked = collect_probs(bases, data);

  MetaConfig mcfg;
  if (!a.meta_config.empty()) mcfg = meta_config_from_json(read_json_file(a.meta_config));
  if (a.seed >= 0) mcfg.seed = static_cast<std::uint64_t>(a.seed);
  auto [meta_train, meta_test] = split_meta(stacked, a.meta_fraction, mcfg.seed);

  MetaCheckpoint meta = train_meta(meta_train, meta_test, mcfg);
  EvalResult ensemble_eval = predict_ensemble(meta, meta_test);

  fs::path out = a.out.empty() ? fs::path(default_out()) / "ensemble" : fs::path(a.out);
  fs::create_directories(out);
  save_meta(meta, (out / "meta").string());
  write_stacked(stacked, (out / "stacked").string());

  std::ofstream csv(out / "ensemble.csv");
  if (!csv) throw DataError("cannot write ensemble.csv under " + out.string());
  csv << "model,meta_test_macro_f1\n";
  const std::size_t k = static_cast<std::size_t>(stacked.k_classes);
  for (std::size_t m = 0; m < stacked.n_models; ++m) {
    std::vector<int> truth, predicted;
    for (const StackedItem& item : meta_test.items) {
      auto begin = item.features.begin() + static_cast<std::ptrdiff_t>(m * k);
      predicted.push_back(static_cast<int>(
          std::max_element(begin, begin + static_cast<std::ptrdiff_t>(k)) - begin));
      truth.push_back(item.label);
    }
    csv << stacked.model_tags[m] << ","
        << json(macro_f1(truth, predicted, stacked.k_classes)).dump() << "\n";
  }
  csv << "ensemble," << json(ensemble_eval.macro_f1).dump() << "\n";

  add_artifacts(out, {{"meta_checkpoint", "meta"},
                      {"stacked_features", "stacked"},
                      {"ensemble_table", "ensemble.csv"}});
  std::cout << "ensemble meta-test macro-F1 " << ensemble_eval.macro_f1 << " over "
            << stacked.n_models << " bases -> " << out.string() << "\n";
  return 0;
}

int cmd_analyze(const AnalyzeArgs& a) {
  std::vector<ItemEval> preds = read_predictions(a.predictions);
  ManifestData manifest = read_manifest(resolve_manifest(a.manifest));

  std::map<std::string, const ItemRecord*> by_id;
  for (const ItemRecord& item : manifest.items) by_id[item.id] = &item;

  std::vector<int> truth, predicted;
  std::vector<double> losses;
  std::vector<bool> with_description;
  std::vector<ItemRecord> matched;
  for (const ItemEval& ev : preds) {
    auto it = by_id.find(ev.id);
    if (it == by_id.end())
      throw DataError("prediction for unknown item '" + ev.id + "'");
    truth.push_back(ev.label);
    predicted.push_back(ev.predicted);
    losses.push_back(ev.loss);
    with_description.push_back(ev.has_description);
    matched.push_back(*it->second);
  }

  Report report;
  report.macro_f1 = macro_f1(truth, predicted, manifest.header.k_classes);
  report.per_class = per_class_f1(truth, predicted, manifest.header.k_classes);
  report.matrix = confusion(truth, predicted, manifest.header.k_classes);
  report.top_errors = top_error_types(report.matrix, a.top_errors);
  bool any_with = false, any_without = false;
  for (bool flag : with_description) (flag ? any_with : any_without) = true;
  if (any_with && any_without) report.groups = group_loss_stats(losses, with_description);
  report.histogram = text_length_histogram(matched, a.bucket_width);

  fs::path out = a.out.empty() ? fs::path(default_out()) / "analysis" : fs::path(a.out);
  export_report(report, out.string());
  add_artifacts(out, {{"report", "report.json"},
                      {"confusion", "confusion.csv"},
                      {"error_types", "error_types.csv"},
                      {"group_stats", "group_stats.csv"},
                      {"length_histogram", "histogram.csv"}});
  std::cout << "macro-F1 " << report.macro_f1 << " over " << preds.size() << " items";
  if (report.groups)
    std::cout << "; no-description vs description one-sided p = "
              << report.groups->welch.p_one_sided;
  std::cout << " -> " << out.string() << "\n";
  return 0;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  Rng rng(a.seed);
  struct Row {
    std::string name;
    double err;
  };
  std::vector<Row> rows;

  auto noisy = [&](std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(shape);
    for (double& x : t.data()) x = rng.normal(0.0, 1.0);
    t.set_requires_grad(true);
    return t;
  };

  {  // weighted layer mix; probe weights keep the loss sensitive, since a
     // plain sum of the normalized rows is constant by construction
    ScalarMixParams mix = ScalarMixParams::init(3);
    Tensor stack = noisy({3, 4, 5});
    Tensor probe = noisy({4, 5});
    probe.set_requires_grad(false);
    rows.push_back({"layer_mix",
                    finite_diff_check([&] { return sum(mul(scalar_mix(stack, mix), probe)); },
                                      {mix.layer_logits, mix.gamma, stack})});
  }
  {  // recurrent encoder
    BiLstmParams lstm = BiLstmParams::init(4, 3, rng);
    Tensor seq = noisy({5, 4});
    std::vector<Tensor> params{seq};
    for (auto* dir : {&lstm.fwd, &lstm.bwd})
      for (Tensor* t : {&dir->w_input, &dir->u_input, &dir->b_input, &dir->w_forget,
                        &dir->u_forget, &dir->b_forget, &dir->w_cell, &dir->u_cell,
                        &dir->b_cell, &dir->w_output, &dir->u_output, &dir->b_output})
        params.push_back(*t);
    rows.push_back({"bilstm",
                    finite_diff_check([&] { return sum(bilstm_forward(seq, lstm)); }, params)});
  }
  {  // sequence projection + image adapter
    SeqProjectionParams proj = SeqProjectionParams::init(4, 3, rng);
    Tensor seq = noisy({5, 4});
    rows.push_back({"seq_projection",
                    finite_diff_check(
                        [&] { return sum(affine(seq, proj.weight, proj.bias)); },
                        {seq, proj.weight, proj.bias})});
    ImageAdapterParams adapter = ImageAdapterParams::init(6, 3, rng);
    Tensor regions = noisy({4, 6});
    rows.push_back({"image_adapter",
                    finite_diff_check([&] { return sum(encode_image(regions, adapter)); },
                                      {regions, adapter.weight, adapter.bias})});
  }
  for (AttentionMode mode :
       {AttentionMode::kBoth, AttentionMode::kImageOnly, AttentionMode::kTextOnly}) {
    CoAttentionParams attn = CoAttentionParams::init(4, 3, rng);
    Tensor seq = noisy({5, 4});
    Tensor img = noisy({4, 6});
    rows.push_back(
        {"coattention_" + to_string(mode),
         finite_diff_check(
             [&] { return sum(coattend(seq, img, attn, mode).feature); },
             {seq, img, attn.w_affinity, attn.w_image, attn.w_seq, attn.w_score_image,
              attn.w_score_text})});
  }
  {  // fusion operators
    BilinearFusionParams bilinear = BilinearFusionParams::init(4, 5, 3, rng);
    Tensor va = noisy({1, 4});
    Tensor vb = noisy({1, 5});
    rows.push_back({"bilinear_fusion",
                    finite_diff_check(
                        [&] { return sum(fuse_bilinear(va, vb, bilinear)); },
                        {va, vb, bilinear.tensor, bilinear.bias})});
    DotFusionParams dot = DotFusionParams::init(4, 5, rng);
    rows.push_back({"dot_fusion",
                    finite_diff_check([&] { return sum(fuse_dot(va, vb, dot)); },
                                      {va, vb, dot.weight, dot.bias})});
  }
  {  // classifier head through the loss
    ClassifierHead head = ClassifierHead::init(4, 5, 3, rng);
    Tensor feature = noisy({1, 4});
    rows.push_back({"classifier_head",
                    finite_diff_check(
                        [&] { return cross_entropy(classify(feature, head), 1); },
                        {feature, head.w_hidden, head.b_hidden, head.w_out, head.b_out})});
  }
  {  // the whole model end to end
    SyntheticConfig sc;
    sc.k_classes = 3;
    sc.layers = 2;
    sc.text_dim = 4;
    sc.image_dim = 5;
    sc.regions = 3;
    sc.n_min = 3;
    sc.n_max = 4;
    sc.signal_dims = 3;
    sc.seed = a.seed;
    LoadedDataset data = to_loaded(synth_generate(sc, 2));
    TrainConfig cfg;
    cfg.hidden = 3;
    cfg.common_dim = 4;
    cfg.attn_dim = 3;
    cfg.seed = a.seed;
    Model model(cfg, data.header);
    std::vector<Tensor> params;
    for (const NamedParam& p : model.params()) params.push_back(p.tensor);
    const LoadedItem& item = data.items[0];
    rows.push_back({"full_model",
                    finite_diff_check(
                        [&] {
                          return cross_entropy(model.item_probs(item),
                                               static_cast<std::size_t>(item.label));
                        },
                        params)});
  }

  bool all_ok = true;
  std::cout << "block                       worst rel err   verdict\n";
  for (const Row& row : rows) {
    bool ok = row.err < a.tolerance;
    all_ok &= ok;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-28s %12.3e   %s", row.name.c_str(), row.err,
                  ok ? "pass" : "FAIL");
    std::cout << buf << "\n";
  }
  if (!all_ok) throw NumericError("gradient check failed (see table above)");
  std::cout << "all " << rows.size() << " blocks pass at tolerance " << a.tolerance << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal fusion trainer: synthetic embeddings, co-attention and "
               "baseline classifiers, stacking ensembles, error analysis"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic embedding dataset");
  synth->add_option("--config", synth_args.config, "synthetic config JSON");
  synth->add_option("--count", synth_args.count, "number of items")->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_args.out, "output directory");
  synth->add_option("--seed", synth_args.seed, "seed override");

  PrepArgs prep_args;
  auto* prep = app.add_subcommand("prep", "clean a manifest, split train/val, histogram");
  prep->add_option("--manifest", prep_args.manifest, "input manifest (file or dataset dir)")
      ->required();
  prep->add_option("--out", prep_args.out, "output directory");
  prep->add_option("--val-fraction", prep_args.val_fraction, "validation share")
      ->check(CLI::Range(0.0, 1.0));
  prep->add_option("--seed", prep_args.seed, "split seed");
  prep->add_option("--bucket-width", prep_args.bucket_width, "histogram bucket width")
      ->check(CLI::PositiveNumber);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train one classifier");
  train_cmd->add_option("--config", train_args.config, "training config JSON");
  train_cmd->add_option("--data", train_args.data, "dataset (manifest file or dir)")->required();
  train_cmd->add_option("--val", train_args.val, "separate validation manifest");
  train_cmd->add_option("--out", train_args.out, "run directory");
  train_cmd->add_option("--variant", train_args.variant, "coattention|concat|bilinear|dot")
      ->check(CLI::IsMember({"coattention", "concat", "bilinear", "dot"}));
  train_cmd->add_option("--attention", train_args.attention, "both|image|text")
      ->check(CLI::IsMember({"both", "image", "text"}));
  train_cmd->add_flag("--no-bilstm", train_args.no_bilstm,
                      "feed-forward text path instead of the recurrent encoder");
  train_cmd->add_flag("--top-layer-only", train_args.top_layer_only,
                      "skip the weighted layer mix, use the top layer");
  train_cmd->add_option("--epochs", train_args.epochs, "epoch count override");
  train_cmd->add_option("--seed", train_args.seed, "seed override");
  train_cmd->add_option("--lr", train_args.lr, "base learning rate override");
  train_cmd->add_option("--val-fraction", train_args.val_fraction,
                        "validation share for the internal split")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--split-seed", train_args.split_seed,
                        "internal split seed (defaults to the training seed)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--data", eval_args.data, "dataset (manifest file or dir)")->required();
  eval_cmd->add_option("--out", eval_args.out, "output directory");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "run the ablation grid");
  ablate->add_option("--config", ablate_args.config, "training config JSON");
  ablate->add_option("--data", ablate_args.data, "dataset (manifest file or dir)")->required();
  ablate->add_option("--out", ablate_args.out, "output directory");
  ablate->add_option("--val-fraction", ablate_args.val_fraction, "validation share")
      ->check(CLI::Range(0.0, 1.0));
  ablate->add_option("--split-seed", ablate_args.split_seed, "internal split seed");

  EnsembleArgs ens_args;
  auto* ens = app.add_subcommand("ensemble", "stack checkpoints into a meta classifier");
  ens->add_option("--checkpoints", ens_args.checkpoints,
                  "checkpoint or run directories (two or more)")
      ->required()
      ->expected(-2);
  ens->add_option("--data", ens_args.data, "held-out dataset the bases never trained on")
      ->required();
  ens->add_option("--out", ens_args.out, "output directory");
  ens->add_option("--meta-config", ens_args.meta_config, "meta training config JSON");
  ens->add_option("--meta-fraction", ens_args.meta_fraction, "share held out for meta-test")
      ->check(CLI::Range(0.0, 1.0));
  ens->add_option("--seed", ens_args.seed, "meta seed override");

  AnalyzeArgs an_args;
  auto* an = app.add_subcommand("analyze", "error analysis report from predictions");
  an->add_option("--predictions", an_args.predictions, "predictions.jsonl from eval")->required();
  an->add_option("--manifest", an_args.manifest, "manifest the predictions came from")
      ->required();
  an->add_option("--out", an_args.out, "output directory");
  an->add_option("--top-errors", an_args.top_errors, "error types to keep")
      ->check(CLI::PositiveNumber);
  an->add_option("--bucket-width", an_args.bucket_width, "histogram bucket width")
      ->check(CLI::PositiveNumber);

  GradcheckArgs grad_args;
  auto* grad = app.add_subcommand("gradcheck",
                                  "finite-difference check of every differentiable block");
  grad->add_option("--seed", grad_args.seed, "shapes and values seed");
  grad->add_option("--tolerance", grad_args.tolerance, "worst relative error allowed")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(synth)) return cmd_synth(synth_args);
    if (app.got_subcommand(prep)) return cmd_prep(prep_args);
    if (app.got_subcommand(train_cmd)) return cmd_train(train_args);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(eval_args);
    if (app.got_subcommand(ablate)) return cmd_ablate(ablate_args);
    if (app.got_subcommand(ens)) return cmd_ensemble(ens_args);
    if (app.got_subcommand(an)) return cmd_analyze(an_args);
    if (app.got_subcommand(grad)) return cmd_gradcheck(grad_args);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints usage, exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage errors are config errors
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
