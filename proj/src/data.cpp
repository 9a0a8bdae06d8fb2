#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mmf/data.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mmf {

// ---- text preprocessing ----

std::string clean_text(const std::string& raw) {
  std::string detagged;
  detagged.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    if (raw[i] == '<') {
      std::size_t close = raw.find('>', i + 1);
      if (close != std::string::npos) {
        detagged.push_back(' ');
        i = close + 1;
        continue;
      }
      // unterminated '<' is kept as literal text
    }
    detagged.push_back(raw[i]);
    ++i;
  }

  std::string out;
  out.reserve(detagged.size());
  bool in_space = true;  // leading whitespace is dropped
  for (char c : detagged) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

std::optional<std::string> normalize_description(const std::optional<std::string>& description) {
  if (!description) return std::nullopt;
  std::string cleaned = clean_text(*description);
  if (cleaned.empty()) return std::nullopt;
  std::string lower = cleaned;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "nan") return std::nullopt;
  return cleaned;
}

std::string build_corpus_text(const std::string& title,
                              const std::optional<std::string>& description) {
  std::string head = clean_text(title);
  if (head.empty()) throw DataError("malformed record: title is empty after cleaning");
  std::optional<std::string> tail = normalize_description(description);
  if (tail) return head + " " + *tail;
  return head;
}

// ---- manifest ----

json header_to_json(const DatasetHeader& h) {
  return json{{"k_classes", h.k_classes},   {"layers", h.layers},
              {"text_dim", h.text_dim},     {"image_dim", h.image_dim},
              {"regions", h.regions},       {"format_version", h.format_version}};
}

namespace {

template <typename T>
T require_field(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError("manifest " + where + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw DataError("manifest " + where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

DatasetHeader header_from_json(const json& obj) {
  DatasetHeader h;
  h.k_classes = require_field<int>(obj, "k_classes", "header");
  h.layers = require_field<std::size_t>(obj, "layers", "header");
  h.text_dim = require_field<std::size_t>(obj, "text_dim", "header");
  h.image_dim = require_field<std::size_t>(obj, "image_dim", "header");
  h.regions = require_field<std::size_t>(obj, "regions", "header");
  h.format_version = require_field<int>(obj, "format_version", "header");
  if (h.format_version != 1)
    throw DataError("manifest header: unsupported format_version " +
                    std::to_string(h.format_version));
  if (h.k_classes < 2) throw DataError("manifest header: k_classes must be at least 2");
  return h;
}

namespace {

void check_items(const std::vector<ItemRecord>& items, int k_classes) {
  std::set<std::string> seen;
  for (const ItemRecord& it : items) {
    if (it.id.empty()) throw DataError("manifest item with empty id");
    if (!seen.insert(it.id).second) throw DataError("duplicate item id: " + it.id);
    if (it.label < 0 || it.label >= k_classes)
      throw DataError("item " + it.id + ": label " + std::to_string(it.label) +
                      " outside [0, " + std::to_string(k_classes) + ")");
  }
}

}  // namespace

void write_manifest(const ManifestData& manifest, const std::string& path) {
  check_items(manifest.items, manifest.header.k_classes);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open manifest for writing: " + path);
  out << header_to_json(manifest.header).dump() << "\n";
  for (const ItemRecord& it : manifest.items) {
    json row{{"id", it.id},
             {"label", it.label},
             {"title", it.title},
             {"has_description", it.has_description},
             {"text_blob", it.text_ref.path},
             {"text_offset", it.text_ref.offset},
             {"image_blob", it.image_ref.path},
             {"image_offset", it.image_ref.offset},
             {"text_len", it.text_len}};
    if (it.description) row["description"] = *it.description;
    out << row.dump() << "\n";
  }
  if (!out) throw DataError("short write: " + path);
}

ManifestData read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  std::string line;
  std::size_t lineno = 0;
  ManifestData manifest;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("manifest " + path + " line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!have_header) {
      manifest.header = header_from_json(obj);
      have_header = true;
      continue;
    }
    std::string where = "line " + std::to_string(lineno);
    ItemRecord it;
    it.id = require_field<std::string>(obj, "id", where);
    it.label = require_field<int>(obj, "label", where);
    it.title = require_field<std::string>(obj, "title", where);
    it.has_description = require_field<bool>(obj, "has_description", where);
    it.text_ref.path = require_field<std::string>(obj, "text_blob", where);
    it.text_ref.offset = require_field<std::uint64_t>(obj, "text_offset", where);
    it.image_ref.path = require_field<std::string>(obj, "image_blob", where);
    it.image_ref.offset = require_field<std::uint64_t>(obj, "image_offset", where);
    it.text_len = require_field<std::size_t>(obj, "text_len", where);
    if (obj.contains("description"))
      it.description = require_field<std::string>(obj, "description", where);
    manifest.items.push_back(std::move(it));
  }
  if (!have_header) throw DataError("manifest " + path + " is empty");
  check_items(manifest.items, manifest.header.k_classes);
  return manifest;
}

// ---- split and statistics ----

SplitResult split_train_val(const std::vector<ItemRecord>& items, double fraction,
                            std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw ConfigError("validation fraction must lie in [0, 1), got " + std::to_string(fraction));

  std::map<int, std::vector<std::size_t>> by_label;  // ordered: classes ascending
  for (std::size_t i = 0; i < items.size(); ++i) by_label[items[i].label].push_back(i);

  Rng rng(seed);
  SplitResult result;
  std::vector<char> to_val(items.size(), 0);
  for (auto& [label, idx] : by_label) {
    if (idx.size() < 2) {
      result.warnings.push_back("class " + std::to_string(label) +
                                " has fewer than 2 items; kept entirely in train");
      continue;
    }
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return items[a].id < items[b].id; });
    rng.shuffle(idx);
    std::size_t take = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
    if (take == 0 && fraction > 0.0) take = 1;
    for (std::size_t j = 0; j < take; ++j) to_val[idx[j]] = 1;
  }
  for (std::size_t i = 0; i < items.size(); ++i)
    (to_val[i] ? result.validation : result.train).push_back(items[i]);
  return result;
}

std::vector<HistBucket> text_length_histogram(const std::vector<ItemRecord>& items,
                                              std::size_t bucket_width) {
  if (bucket_width == 0) throw ConfigError("histogram bucket width must be positive");
  if (items.empty()) return {};
  std::size_t longest = 0;
  for (const ItemRecord& it : items) longest = std::max(longest, it.text_len);
  std::vector<HistBucket> buckets(longest / bucket_width + 1);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    buckets[b].lo = b * bucket_width;
    buckets[b].hi = (b + 1) * bucket_width - 1;
  }
  for (const ItemRecord& it : items) ++buckets[it.text_len / bucket_width].count;
  return buckets;
}

// ---- synthetic generator ----

void validate(const SyntheticConfig& cfg) {
  if (cfg.k_classes < 2) throw ConfigError("synthetic: k_classes must be at least 2");
  if (cfg.layers == 0 || cfg.text_dim == 0 || cfg.image_dim == 0 || cfg.regions == 0)
    throw ConfigError("synthetic: layers, text_dim, image_dim and regions must be positive");
  if (cfg.n_min == 0 || cfg.n_min > cfg.n_max)
    throw ConfigError("synthetic: token range requires 1 <= n_min <= n_max");
  if (cfg.signal_dims == 0 || cfg.signal_dims > std::min(cfg.text_dim, cfg.image_dim))
    throw ConfigError("synthetic: signal_dims must lie in [1, min(text_dim, image_dim)]");
  if (cfg.text_signal_fraction < 0.0 || cfg.text_signal_fraction > 1.0)
    throw ConfigError("synthetic: text_signal_fraction must lie in [0, 1]");
  if (cfg.noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be non-negative");
  if (cfg.p_no_description < 0.0 || cfg.p_no_description > 1.0)
    throw ConfigError("synthetic: p_no_description must lie in [0, 1]");
}

nlohmann::json to_json(const SyntheticConfig& cfg) {
  return nlohmann::json{{"k_classes", cfg.k_classes},
                        {"layers", cfg.layers},
                        {"text_dim", cfg.text_dim},
                        {"image_dim", cfg.image_dim},
                        {"regions", cfg.regions},
                        {"n_min", cfg.n_min},
                        {"n_max", cfg.n_max},
                        {"signal_dims", cfg.signal_dims},
                        {"text_signal_fraction", cfg.text_signal_fraction},
                        {"noise_sigma", cfg.noise_sigma},
                        {"p_no_description", cfg.p_no_description},
                        {"seed", cfg.seed}};
}

SyntheticConfig synth_config_from_json(const nlohmann::json& obj) {
  if (!obj.is_object()) throw ConfigError("synthetic config must be a JSON object");
  static const char* known[] = {"k_classes",   "layers",      "text_dim",
                                "image_dim",   "regions",     "n_min",
                                "n_max",       "signal_dims", "text_signal_fraction",
                                "noise_sigma", "p_no_description", "seed"};
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok |= it.key() == k;
    if (!ok) throw ConfigError("unknown synthetic config field '" + it.key() + "'");
  }
  SyntheticConfig cfg;
  auto read = [&](const char* key, auto& into) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
      into = it->template get<std::decay_t<decltype(into)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("synthetic config field '") + key +
                        "' has the wrong type");
    }
  };
  read("k_classes", cfg.k_classes);
  read("layers", cfg.layers);
  read("text_dim", cfg.text_dim);
  read("image_dim", cfg.image_dim);
  read("regions", cfg.regions);
  read("n_min", cfg.n_min);
  read("n_max", cfg.n_max);
  read("signal_dims", cfg.signal_dims);
  read("text_signal_fraction", cfg.text_signal_fraction);
  read("noise_sigma", cfg.noise_sigma);
  read("p_no_description", cfg.p_no_description);
  read("seed", cfg.seed);
  return cfg;
}

namespace {

std::vector<std::size_t> pick_positions(Rng& rng, std::size_t total, std::size_t want) {
  std::vector<std::size_t> pos(total);
  for (std::size_t i = 0; i < total; ++i) pos[i] = i;
  rng.shuffle(pos);
  pos.resize(std::min(want, total));
  return pos;
}

}  // namespace

SyntheticDataset synth_generate(const SyntheticConfig& cfg, std::size_t count) {
  validate(cfg);
  Rng rng(cfg.seed);

  const std::size_t k = static_cast<std::size_t>(cfg.k_classes);
  std::vector<std::vector<double>> prototypes(k, std::vector<double>(cfg.signal_dims));
  for (std::size_t c = 0; c < k; ++c) {
    double norm2 = 0.0;
    for (double& v : prototypes[c]) {
      v = rng.normal();
      norm2 += v * v;
    }
    double norm = std::sqrt(norm2);
    if (norm < 1e-12) {
      prototypes[c].assign(cfg.signal_dims, 0.0);
      prototypes[c][0] = 1.0;
    } else {
      for (double& v : prototypes[c]) v /= norm;
    }
  }

  const std::size_t text_only =
      static_cast<std::size_t>(std::llround(cfg.text_signal_fraction *
                                            static_cast<double>(cfg.signal_dims)));
  const std::size_t top_start = (cfg.layers + 1) / 2;  // ceil(L/2)

  SyntheticDataset ds;
  ds.header.k_classes = cfg.k_classes;
  ds.header.layers = cfg.layers;
  ds.header.text_dim = cfg.text_dim;
  ds.header.image_dim = cfg.image_dim;
  ds.header.regions = cfg.regions;

  for (std::size_t i = 0; i < count; ++i) {
    SyntheticItem item;
    int label = static_cast<int>(i % k);
    char buf[32];
    std::snprintf(buf, sizeof buf, "item-%06zu", i);
    item.record.id = buf;
    item.record.label = label;
    item.record.title = "synthetic product " + std::string(buf) + " class " +
                        std::to_string(label);

    std::size_t n = rng.uniform_int(cfg.n_min, cfg.n_max);
    bool drop_desc = rng.uniform01() < cfg.p_no_description;
    if (drop_desc) {
      n = std::max<std::size_t>(1, n / 2);
      item.record.description = std::nullopt;
      item.record.has_description = false;
    } else {
      item.record.description = "generated description for " + std::string(buf);
      item.record.has_description = true;
    }
    item.record.text_len = n;

    item.text.dims = {cfg.layers, n, cfg.text_dim};
    item.text.values.resize(cfg.layers * n * cfg.text_dim);
    for (double& v : item.text.values) v = cfg.noise_sigma * rng.normal();

    std::vector<std::size_t> token_pos = pick_positions(rng, n, (n + 3) / 4);
    for (std::size_t layer = top_start; layer < cfg.layers; ++layer) {
      for (std::size_t t : token_pos) {
        double* row = item.text.values.data() + (layer * n + t) * cfg.text_dim;
        for (std::size_t s = 0; s < text_only; ++s) row[s] += prototypes[label][s];
      }
    }

    item.image.dims = {cfg.regions, cfg.image_dim};
    item.image.values.resize(cfg.regions * cfg.image_dim);
    for (double& v : item.image.values) v = cfg.noise_sigma * rng.normal();

    std::vector<std::size_t> region_pos =
        pick_positions(rng, cfg.regions, (cfg.regions + 3) / 4);
    for (std::size_t r : region_pos) {
      double* row = item.image.values.data() + r * cfg.image_dim;
      for (std::size_t s = text_only; s < cfg.signal_dims; ++s)
        row[s] += prototypes[label][s];
    }

    item.record.text_ref.path = "blobs/" + item.record.id + "_text.mmeb";
    item.record.image_ref.path = "blobs/" + item.record.id + "_image.mmeb";
    ds.items.push_back(std::move(item));
  }
  return ds;
}

void write_dataset(const SyntheticDataset& dataset, const std::string& dir, BlobDtype dtype) {
  fs::create_directories(fs::path(dir) / "blobs");
  ManifestData manifest;
  manifest.header = dataset.header;
  for (const SyntheticItem& item : dataset.items) {
    write_blob_file((fs::path(dir) / item.record.text_ref.path).string(), item.text, dtype);
    write_blob_file((fs::path(dir) / item.record.image_ref.path).string(), item.image, dtype);
    manifest.items.push_back(item.record);
  }
  write_manifest(manifest, (fs::path(dir) / "manifest.jsonl").string());
}

// ---- loading ----

namespace {

Tensor tensor_from(const BlobArray& array) {
  return Tensor::from_data(array.dims, array.values);
}

LoadedItem loaded_from(const ItemRecord& rec, const BlobArray& text, const BlobArray& image,
                       const DatasetHeader& header) {
  if (text.dims.size() != 3 || text.dims[0] != header.layers || text.dims[2] != header.text_dim)
    throw DataError("item " + rec.id + ": text blob shape does not match the dataset header");
  if (image.dims.size() != 2 || image.dims[0] != header.regions ||
      image.dims[1] != header.image_dim)
    throw DataError("item " + rec.id + ": image blob shape does not match the dataset header");
  LoadedItem out;
  out.id = rec.id;
  out.label = rec.label;
  out.has_description = rec.has_description;
  out.text_len = text.dims[1];
  out.text_stack = tensor_from(text);
  out.image = tensor_from(image);
  return out;
}

}  // namespace

LoadedDataset load_items(const DatasetHeader& header, const std::vector<ItemRecord>& records,
                         const std::string& base_dir) {
  LoadedDataset ds;
  ds.header = header;
  for (const ItemRecord& rec : records) {
    BlobArray text =
        read_blob_file((fs::path(base_dir) / rec.text_ref.path).string(), rec.text_ref.offset);
    BlobArray image =
        read_blob_file((fs::path(base_dir) / rec.image_ref.path).string(), rec.image_ref.offset);
    ds.items.push_back(loaded_from(rec, text, image, header));
  }
  return ds;
}

LoadedDataset load_dataset(const std::string& manifest_path) {
  ManifestData manifest = read_manifest(manifest_path);
  std::string base = fs::path(manifest_path).parent_path().string();
  if (base.empty()) base = ".";
  return load_items(manifest.header, manifest.items, base);
}

LoadedDataset to_loaded(const SyntheticDataset& dataset) {
  LoadedDataset ds;
  ds.header = dataset.header;
  for (const SyntheticItem& item : dataset.items)
    ds.items.push_back(loaded_from(item.record, item.text, item.image, dataset.header));
  return ds;
}

}  // namespace mmf
