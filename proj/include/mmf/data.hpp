#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mmf/errors.hpp"
#include "mmf/rng.hpp"
#include "mmf/tensor.hpp"

namespace mmf {

// ---- embedding blob container ----
//
// Binary layout, all integers little-endian:
//   bytes 0..3   magic "MMEB" (4D 4D 45 42)
//   bytes 4..7   version (currently 1)
//   bytes 8..11  dtype code: 0 = float32, 1 = float64
//   bytes 12..15 rank (2 or 3)
//   then rank x u32 extents, then the row-major payload.

enum class BlobDtype : std::uint32_t { kFloat32 = 0, kFloat64 = 1 };

constexpr std::uint32_t kBlobVersion = 1;

struct BlobArray {
  std::vector<std::size_t> dims;  // rank 2 or 3
  std::vector<double> values;     // promoted to 64-bit on read
};

std::vector<std::uint8_t> write_blob(const BlobArray& array, BlobDtype dtype);
BlobArray read_blob(const std::uint8_t* bytes, std::size_t len);
BlobArray read_blob(const std::vector<std::uint8_t>& bytes);

void write_blob_file(const std::string& path, const BlobArray& array, BlobDtype dtype);
BlobArray read_blob_file(const std::string& path, std::uint64_t offset = 0);

// ---- records and manifest ----

struct BlobRef {
  std::string path;  // relative to the manifest directory
  std::uint64_t offset = 0;
};

struct ItemRecord {
  std::string id;
  int label = 0;
  std::string title;
  std::optional<std::string> description;
  bool has_description = false;
  BlobRef text_ref;   // L x n x d_t
  BlobRef image_ref;  // N x d_img
  std::size_t text_len = 0;
};

struct DatasetHeader {
  int k_classes = 0;
  std::size_t layers = 0;     // L
  std::size_t text_dim = 0;   // d_t
  std::size_t image_dim = 0;  // d_img
  std::size_t regions = 0;    // N
  int format_version = 1;
};

struct ManifestData {
  DatasetHeader header;
  std::vector<ItemRecord> items;
};

nlohmann::json header_to_json(const DatasetHeader& header);
DatasetHeader header_from_json(const nlohmann::json& obj);

// JSON-lines: one header object, then one object per item. Throws DataError
// on duplicate ids or labels outside [0, K).
void write_manifest(const ManifestData& manifest, const std::string& path);
ManifestData read_manifest(const std::string& path);

// ---- text preprocessing ----

// Replaces <...> tag spans with spaces, collapses whitespace runs, trims.
std::string clean_text(const std::string& raw);

// Empty, whitespace-only and literal "Nan" descriptions normalize to absent.
std::optional<std::string> normalize_description(const std::optional<std::string>& description);

// clean(title) [+ " " + clean(description)]; empty cleaned title is malformed.
std::string build_corpus_text(const std::string& title,
                              const std::optional<std::string>& description);

// ---- split and corpus statistics ----

struct SplitResult {
  std::vector<ItemRecord> train;
  std::vector<ItemRecord> validation;
  std::vector<std::string> warnings;
};

// Stratified by label: per class floor(fraction * count) to validation
// (minimum 1 when the class has >= 2 items). Classes with a single item stay
// in train with a warning. Deterministic under seed.
SplitResult split_train_val(const std::vector<ItemRecord>& items, double fraction,
                            std::uint64_t seed);

struct HistBucket {
  std::size_t lo = 0, hi = 0;  // inclusive bounds
  std::size_t count = 0;
};

// Contiguous buckets [k*w, (k+1)*w - 1] from zero through the longest item.
std::vector<HistBucket> text_length_histogram(const std::vector<ItemRecord>& items,
                                              std::size_t bucket_width);

// ---- synthetic embedding generator ----

struct SyntheticConfig {
  int k_classes = 8;                // K
  std::size_t layers = 4;           // L
  std::size_t text_dim = 32;        // d_t
  std::size_t image_dim = 48;       // d_img
  std::size_t regions = 16;         // N
  std::size_t n_min = 5;            // token count range
  std::size_t n_max = 20;
  std::size_t signal_dims = 16;     // d_sig
  double text_signal_fraction = 0.5;  // rho: share of signal dims text-only
  double noise_sigma = 0.1;
  double p_no_description = 0.3;
  std::uint64_t seed = 1;
};

void validate(const SyntheticConfig& cfg);

nlohmann::json to_json(const SyntheticConfig& cfg);
// Strict: unknown or wrong-typed fields raise ConfigError naming the field;
// absent fields keep their defaults.
SyntheticConfig synth_config_from_json(const nlohmann::json& obj);

struct SyntheticItem {
  ItemRecord record;
  BlobArray text;   // L x n x d_t
  BlobArray image;  // N x d_img
};

struct SyntheticDataset {
  DatasetHeader header;
  std::vector<SyntheticItem> items;
};

// Deterministic under (cfg, count): class prototypes are unit-norm vectors
// over signal_dims coordinates, the first round(rho * d_sig) of which appear
// only in text (top half of the layer stack, ceil(n/4) token positions) and
// the rest only in image (ceil(N/4) regions). About p_no_description of the
// items lose their description and half their tokens.
SyntheticDataset synth_generate(const SyntheticConfig& cfg, std::size_t count);

// Writes manifest.jsonl plus blobs/<id>_{text,image}.mmeb under dir.
void write_dataset(const SyntheticDataset& dataset, const std::string& dir,
                   BlobDtype dtype = BlobDtype::kFloat32);

// ---- loaded (in-memory) datasets for training ----

struct LoadedItem {
  std::string id;
  int label = 0;
  bool has_description = false;
  std::size_t text_len = 0;
  Tensor text_stack;  // L x n x d_t
  Tensor image;       // N x d_img
};

struct LoadedDataset {
  DatasetHeader header;
  std::vector<LoadedItem> items;
};

LoadedDataset load_dataset(const std::string& manifest_path);
LoadedDataset load_items(const DatasetHeader& header, const std::vector<ItemRecord>& records,
                         const std::string& base_dir);
LoadedDataset to_loaded(const SyntheticDataset& dataset);  // no disk round-trip

}  // namespace mmf
