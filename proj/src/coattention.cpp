#include "mmf/coattention.hpp"

#include "mmf/errors.hpp"

namespace mmf {

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kBoth: return "both";
    case AttentionMode::kImageOnly: return "image";
    case AttentionMode::kTextOnly: return "text";
  }
  return "both";
}

AttentionMode attention_mode_from(const std::string& name) {
  if (name == "both") return AttentionMode::kBoth;
  if (name == "image" || name == "image_only") return AttentionMode::kImageOnly;
  if (name == "text" || name == "text_only") return AttentionMode::kTextOnly;
  throw ConfigError("unknown attention mode '" + name + "' (expected both, image or text)");
}

namespace {

Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

void check_pair(const Tensor& seq, const Tensor& image) {
  if (seq.rank() != 2 || image.rank() != 2)
    throw ShapeError("co-attention operates on rank-2 inputs");
  if (seq.shape()[1] != image.shape()[0])
    throw ShapeError("co-attention: token width " + std::to_string(seq.shape()[1]) +
                     " does not match image row count " + std::to_string(image.shape()[0]));
}

}  // namespace

CoAttentionParams CoAttentionParams::init(std::size_t d, std::size_t k, Rng& rng) {
  if (d == 0 || k == 0) throw ConfigError("co-attention dimensions must be positive");
  CoAttentionParams p;
  p.w_affinity = trainable(xavier_init(d, d, rng));
  p.w_image = trainable(xavier_init(k, d, rng));
  p.w_seq = trainable(xavier_init(k, d, rng));
  p.w_score_image = trainable(xavier_init(1, k, rng));
  p.w_score_text = trainable(xavier_init(1, k, rng));
  return p;
}

Tensor affinity(const Tensor& seq, const Tensor& image, const Tensor& w_affinity) {
  check_pair(seq, image);
  return tanh(matmul(matmul(seq, w_affinity), image));
}

std::pair<Tensor, Tensor> attention_maps(const Tensor& seq, const Tensor& image,
                                         const Tensor& affinity_map, const Tensor& w_image,
                                         const Tensor& w_seq) {
  check_pair(seq, image);
  Tensor seq_cols = transpose(seq);               // d x s
  Tensor img_proj = matmul(w_image, image);       // k x N
  Tensor seq_proj = matmul(w_seq, seq_cols);      // k x s
  Tensor map_image = tanh(add(img_proj, matmul(seq_proj, affinity_map)));
  Tensor map_text = tanh(add(seq_proj, matmul(img_proj, transpose(affinity_map))));
  return {map_image, map_text};
}

std::pair<Tensor, Tensor> attention_probs(const Tensor& map_image, const Tensor& map_text,
                                          const Tensor& w_score_image,
                                          const Tensor& w_score_text) {
  Tensor probs_image = softmax(matmul(w_score_image, map_image), 1);
  Tensor probs_text = softmax(matmul(w_score_text, map_text), 1);
  return {probs_image, probs_text};
}

std::pair<Tensor, Tensor> attend(const Tensor& image, const Tensor& seq,
                                 const Tensor& probs_image, const Tensor& probs_text) {
  Tensor image_vec = matmul(probs_image, transpose(image));  // 1 x d
  Tensor text_vec = matmul(probs_text, seq);                 // 1 x d
  return {image_vec, text_vec};
}

CoAttentionOutput coattend(const Tensor& seq, const Tensor& image,
                           const CoAttentionParams& params, AttentionMode mode) {
  CoAttentionOutput out;
  out.mode = mode;
  out.affinity_map = affinity(seq, image, params.w_affinity);
  auto maps = attention_maps(seq, image, out.affinity_map, params.w_image, params.w_seq);
  out.map_image = maps.first;
  out.map_text = maps.second;
  auto probs =
      attention_probs(out.map_image, out.map_text, params.w_score_image, params.w_score_text);
  out.probs_image = probs.first;
  out.probs_text = probs.second;
  auto vecs = attend(image, seq, out.probs_image, out.probs_text);
  out.image_vec = vecs.first;
  out.text_vec = vecs.second;
  switch (mode) {
    case AttentionMode::kBoth: out.feature = concat(out.image_vec, out.text_vec, 1); break;
    case AttentionMode::kImageOnly: out.feature = out.image_vec; break;
    case AttentionMode::kTextOnly: out.feature = out.text_vec; break;
  }
  return out;
}

}  // namespace mmf
