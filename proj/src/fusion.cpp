#include "mmf/fusion.hpp"

#include <string>
#include <vector>

#include "mmf/errors.hpp"

namespace mmf {
namespace {

Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

void check_vector(const Tensor& v, const char* which) {
  if (v.rank() == 1) return;
  if (v.rank() == 2 && v.shape()[0] == 1) return;
  throw ShapeError(std::string("fusion expects a vector for ") + which + ", got shape " +
                   shape_str(v.shape()));
}

// rank-1 convenience inputs are copied into row form, which cannot carry a
// graph edge; trainable callers must pass 1 x d
Tensor as_row(const Tensor& v, const char* which) {
  if (v.rank() == 2) return v;
  if (v.requires_grad())
    throw ShapeError(std::string("fusion: pass a 1 x d tensor for the trainable ") + which);
  return Tensor::from_data({1, v.size()}, v.data());
}

}  // namespace

Tensor fuse_concat(const Tensor& a, const Tensor& b) {
  check_vector(a, "the first operand");
  check_vector(b, "the second operand");
  if (a.rank() != b.rank())
    throw ShapeError("fuse_concat operands must share rank, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  return concat(a, b, a.rank() - 1);
}

BilinearFusionParams BilinearFusionParams::init(std::size_t d_a, std::size_t d_b,
                                                std::size_t width, Rng& rng) {
  if (d_a == 0 || d_b == 0 || width == 0)
    throw ConfigError("bilinear fusion dimensions must be positive");
  BilinearFusionParams p;
  p.tensor = trainable(xavier_init_fans({width, d_a, d_b}, d_a, d_b, rng));
  p.bias = Tensor::zeros({1, width}, true);
  return p;
}

Tensor fuse_bilinear(const Tensor& a, const Tensor& b, const BilinearFusionParams& params) {
  check_vector(a, "the first operand");
  check_vector(b, "the second operand");
  const std::vector<std::size_t>& dims = params.tensor.shape();
  std::size_t width = dims[0];
  if (a.size() != dims[1] || b.size() != dims[2])
    throw ShapeError("fuse_bilinear: operands " + shape_str(a.shape()) + ", " +
                     shape_str(b.shape()) + " do not fit slices of " +
                     shape_str(params.tensor.shape()));

  Tensor row_a = as_row(a, "first operand");
  Tensor col_b = transpose(as_row(b, "second operand"));

  std::vector<Tensor> scores(width);
  for (std::size_t k = 0; k < width; ++k) {
    Tensor slice = slice_layer(params.tensor, k);  // d_a x d_b
    scores[k] = matmul(matmul(row_a, slice), col_b);  // 1 x 1
  }
  Tensor stacked = stack_rows(scores);  // width x 1
  return add(transpose(stacked), params.bias);
}

DotFusionParams DotFusionParams::init(std::size_t d_a, std::size_t d_b, Rng& rng) {
  if (d_a == 0 || d_b == 0) throw ConfigError("dot fusion dimensions must be positive");
  DotFusionParams p;
  p.weight = trainable(xavier_init(d_b, d_a, rng));
  p.bias = Tensor::zeros({1, d_a}, true);
  return p;
}

Tensor fuse_dot(const Tensor& a, const Tensor& b, const DotFusionParams& params) {
  check_vector(a, "the first operand");
  check_vector(b, "the second operand");
  if (b.size() != params.weight.shape()[0] || a.size() != params.weight.shape()[1])
    throw ShapeError("fuse_dot: operands " + shape_str(a.shape()) + ", " +
                     shape_str(b.shape()) + " do not fit projection " +
                     shape_str(params.weight.shape()));
  return mul(as_row(a, "first operand"), affine(as_row(b, "second operand"), params.weight,
                                                params.bias));
}

ClassifierHead ClassifierHead::init(std::size_t feature_width, std::size_t hidden_width,
                                    std::size_t k_classes, Rng& rng) {
  if (feature_width == 0 || hidden_width == 0 || k_classes < 2)
    throw ConfigError("classifier head needs positive widths and at least two classes");
  ClassifierHead h;
  h.w_hidden = trainable(xavier_init(feature_width, hidden_width, rng));
  h.b_hidden = Tensor::zeros({1, hidden_width}, true);
  h.w_out = trainable(xavier_init(hidden_width, k_classes, rng));
  h.b_out = Tensor::zeros({1, k_classes}, true);
  return h;
}

Tensor classify(const Tensor& feature, const ClassifierHead& head) {
  Tensor hidden = tanh(affine(feature, head.w_hidden, head.b_hidden));
  return softmax(affine(hidden, head.w_out, head.b_out), 1);
}

Tensor cross_entropy(const Tensor& probs, std::size_t label) {
  if (label >= probs.size())
    throw DataError("cross_entropy: label " + std::to_string(label) +
                    " out of range for " + std::to_string(probs.size()) + " classes");
  return scalar_mul(log(pick(probs, label)), -1.0);
}

}  // namespace mmf
