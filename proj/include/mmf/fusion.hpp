#pragma once

#include <cstddef>

#include "mmf/rng.hpp"
#include "mmf/tensor.hpp"

namespace mmf {

// Baseline fusion operators over a pair of modality vectors (1 x d_a, 1 x d_b)
// plus the shared classifier head.

// [a ++ b]; accepts rank-1 or 1 x d inputs of matching rank.
Tensor fuse_concat(const Tensor& a, const Tensor& b);

struct BilinearFusionParams {
  Tensor tensor;  // B x d_a x d_b — slice k scores a * tensor_k * b'
  Tensor bias;    // 1 x B

  static BilinearFusionParams init(std::size_t d_a, std::size_t d_b, std::size_t width,
                                   Rng& rng);
};

// 1 x B vector of bilinear forms
Tensor fuse_bilinear(const Tensor& a, const Tensor& b, const BilinearFusionParams& params);

struct DotFusionParams {
  Tensor weight;  // d_b x d_a, projects b into a's space
  Tensor bias;    // 1 x d_a

  static DotFusionParams init(std::size_t d_a, std::size_t d_b, Rng& rng);
};

// a (.) (b * weight + bias), elementwise; 1 x d_a
Tensor fuse_dot(const Tensor& a, const Tensor& b, const DotFusionParams& params);

// ---- classifier head: affine -> tanh -> affine -> softmax ----

struct ClassifierHead {
  Tensor w_hidden, b_hidden;  // f x H, 1 x H
  Tensor w_out, b_out;        // H x K, 1 x K

  static ClassifierHead init(std::size_t feature_width, std::size_t hidden_width,
                             std::size_t k_classes, Rng& rng);
};

// 1 x f -> 1 x K class probabilities (positive, summing to one)
Tensor classify(const Tensor& feature, const ClassifierHead& head);

// negative log probability of the observed class; scalar
Tensor cross_entropy(const Tensor& probs, std::size_t label);

}  // namespace mmf
