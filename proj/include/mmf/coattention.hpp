#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "mmf/rng.hpp"
#include "mmf/tensor.hpp"

namespace mmf {

// Alternating attention between a token sequence T (s x d) and an image
// region matrix I (d x N), producing one attended vector per modality.

enum class AttentionMode { kBoth, kImageOnly, kTextOnly };

std::string to_string(AttentionMode mode);
AttentionMode attention_mode_from(const std::string& name);

struct CoAttentionParams {
  Tensor w_affinity;     // d x d
  Tensor w_image;        // k x d, applied to image columns
  Tensor w_seq;          // k x d, applied to token vectors
  Tensor w_score_image;  // 1 x k
  Tensor w_score_text;   // 1 x k

  static CoAttentionParams init(std::size_t d, std::size_t k, Rng& rng);
};

// C = tanh(T * W_aff * I), shape s x N
Tensor affinity(const Tensor& seq, const Tensor& image, const Tensor& w_affinity);

// H_img = tanh(W_img I + (W_seq T') C)         (k x N)
// H_txt = tanh(W_seq T' + (W_img I) C')        (k x s)
std::pair<Tensor, Tensor> attention_maps(const Tensor& seq, const Tensor& image,
                                         const Tensor& affinity_map, const Tensor& w_image,
                                         const Tensor& w_seq);

// softmax over regions / tokens of the scored maps; (1 x N, 1 x s)
std::pair<Tensor, Tensor> attention_probs(const Tensor& map_image, const Tensor& map_text,
                                          const Tensor& w_score_image,
                                          const Tensor& w_score_text);

// probability-weighted sums: image vector 1 x d, text vector 1 x d
std::pair<Tensor, Tensor> attend(const Tensor& image, const Tensor& seq,
                                 const Tensor& probs_image, const Tensor& probs_text);

struct CoAttentionOutput {
  Tensor affinity_map;  // s x N
  Tensor map_image;     // k x N
  Tensor map_text;      // k x s
  Tensor probs_image;   // 1 x N
  Tensor probs_text;    // 1 x s
  Tensor image_vec;     // 1 x d
  Tensor text_vec;      // 1 x d
  Tensor feature;       // 1 x 2d for kBoth, 1 x d otherwise
  AttentionMode mode = AttentionMode::kBoth;
};

// Full pass. Single-modality modes still run the affinity and both maps (the
// kept branch depends on them through the cross terms); only the feature
// changes, so the dropped branch's score vector receives no gradient.
CoAttentionOutput coattend(const Tensor& seq, const Tensor& image,
                           const CoAttentionParams& params, AttentionMode mode);

}  // namespace mmf
