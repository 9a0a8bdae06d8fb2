#pragma once

#include <cstddef>

#include "mmf/rng.hpp"
#include "mmf/tensor.hpp"

namespace mmf {

// ---- learned scalar mix over a layer stack ----

struct ScalarMixParams {
  Tensor layer_logits;  // 1 x L, softmaxed into mixing weights
  Tensor gamma;         // global scale, shape {1}

  static ScalarMixParams init(std::size_t layers);  // logits 0, gamma 1
};

// L x n x d -> n x d: per-layer row normalization, softmax-weighted sum,
// scaled by gamma.
Tensor scalar_mix(const Tensor& stack, const ScalarMixParams& params);

// Ablation path: the raw top layer, no normalization, no learned weights.
Tensor top_layer(const Tensor& stack);

// ---- bidirectional LSTM ----

struct LstmDirectionParams {
  // row-vector convention: x (1 x d_in) times w (d_in x h), h (1 x h) times u (h x h)
  Tensor w_input, u_input, b_input;
  Tensor w_forget, u_forget, b_forget;  // forget bias starts at 1
  Tensor w_cell, u_cell, b_cell;
  Tensor w_output, u_output, b_output;
};

struct BiLstmParams {
  LstmDirectionParams fwd;
  LstmDirectionParams bwd;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;

  static BiLstmParams init(std::size_t input_dim, std::size_t hidden, Rng& rng);
};

// n x d_in -> n x 2h; row t is [forward state at t ++ backward state at t].
// Both directions start from zero hidden and cell state.
Tensor bilstm_forward(const Tensor& seq, const BiLstmParams& params);

// ---- projections into the shared width ----

struct SeqProjectionParams {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  static SeqProjectionParams init(std::size_t in, std::size_t out, Rng& rng);
};

struct ImageAdapterParams {
  Tensor weight;  // d_img x d
  Tensor bias;    // 1 x d

  static ImageAdapterParams init(std::size_t in, std::size_t out, Rng& rng);
};

// mix -> bilstm -> affine projection; L x n x d_t -> n x d.
Tensor encode_text(const Tensor& stack, const ScalarMixParams& mix, const BiLstmParams& lstm,
                   const SeqProjectionParams& proj);

// N x d_img -> d x N (columns are adapted region vectors).
Tensor encode_image(const Tensor& regions, const ImageAdapterParams& adapter);

}  // namespace mmf
