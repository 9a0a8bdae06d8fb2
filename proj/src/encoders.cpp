#include <string>

#include "mmf/encoders.hpp"
#include "mmf/errors.hpp"

namespace mmf {

ScalarMixParams ScalarMixParams::init(std::size_t layers) {
  if (layers == 0) throw ConfigError("scalar mix needs at least one layer");
  ScalarMixParams p;
  p.layer_logits = Tensor::zeros({1, layers}, true);
  p.gamma = Tensor::scalar(1.0, true);
  return p;
}

Tensor scalar_mix(const Tensor& stack, const ScalarMixParams& params) {
  if (stack.rank() != 3)
    throw ShapeError("scalar_mix expects a rank-3 layer stack, got rank " +
                     std::to_string(stack.rank()));
  std::size_t layers = stack.shape()[0];
  if (params.layer_logits.shape() != std::vector<std::size_t>{1, layers})
    throw ShapeError("scalar_mix: logit count does not match the stack's layer count");

  Tensor weights = softmax(params.layer_logits, 1);
  Tensor acc;
  for (std::size_t j = 0; j < layers; ++j) {
    Tensor term = scale(layer_norm_rows(slice_layer(stack, j)), pick(weights, j));
    acc = j == 0 ? term : add(acc, term);
  }
  return scale(acc, params.gamma);
}

Tensor top_layer(const Tensor& stack) {
  if (stack.rank() != 3)
    throw ShapeError("top_layer expects a rank-3 layer stack, got rank " +
                     std::to_string(stack.rank()));
  return slice_layer(stack, stack.shape()[0] - 1);
}

namespace {

Tensor trainable(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

LstmDirectionParams init_direction(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  auto w = [&] { return trainable(xavier_init(input_dim, hidden, rng)); };
  auto u = [&] { return trainable(xavier_init(hidden, hidden, rng)); };
  LstmDirectionParams d;
  d.w_input = w();
  d.u_input = u();
  d.b_input = Tensor::zeros({1, hidden}, true);
  d.w_forget = w();
  d.u_forget = u();
  d.b_forget = Tensor::full({1, hidden}, 1.0, true);
  d.w_cell = w();
  d.u_cell = u();
  d.b_cell = Tensor::zeros({1, hidden}, true);
  d.w_output = w();
  d.u_output = u();
  d.b_output = Tensor::zeros({1, hidden}, true);
  return d;
}

struct LstmState {
  Tensor h, c;
};

LstmState lstm_step(const Tensor& x, const LstmState& prev, const LstmDirectionParams& p) {
  auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b) {
    return add(add(matmul(x, w), matmul(prev.h, u)), b);
  };
  Tensor i = sigmoid(gate(p.w_input, p.u_input, p.b_input));
  Tensor f = sigmoid(gate(p.w_forget, p.u_forget, p.b_forget));
  Tensor g = tanh(gate(p.w_cell, p.u_cell, p.b_cell));
  Tensor o = sigmoid(gate(p.w_output, p.u_output, p.b_output));
  LstmState next;
  next.c = add(mul(f, prev.c), mul(i, g));
  next.h = mul(o, tanh(next.c));
  return next;
}

}  // namespace

BiLstmParams BiLstmParams::init(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  if (input_dim == 0 || hidden == 0)
    throw ConfigError("bilstm dimensions must be positive");
  BiLstmParams p;
  p.input_dim = input_dim;
  p.hidden = hidden;
  p.fwd = init_direction(input_dim, hidden, rng);
  p.bwd = init_direction(input_dim, hidden, rng);
  return p;
}

Tensor bilstm_forward(const Tensor& seq, const BiLstmParams& params) {
  if (seq.rank() != 2)
    throw ShapeError("bilstm_forward expects a rank-2 sequence, got rank " +
                     std::to_string(seq.rank()));
  if (seq.shape()[1] != params.input_dim)
    throw ShapeError("bilstm_forward: sequence width " + std::to_string(seq.shape()[1]) +
                     " does not match input_dim " + std::to_string(params.input_dim));
  std::size_t n = seq.shape()[0];
  std::size_t h = params.hidden;

  std::vector<Tensor> fwd_h(n), bwd_h(n);
  LstmState state{Tensor::zeros({1, h}), Tensor::zeros({1, h})};
  for (std::size_t t = 0; t < n; ++t) {
    state = lstm_step(row(seq, t), state, params.fwd);
    fwd_h[t] = state.h;
  }
  state = LstmState{Tensor::zeros({1, h}), Tensor::zeros({1, h})};
  for (std::size_t t = n; t-- > 0;) {
    state = lstm_step(row(seq, t), state, params.bwd);
    bwd_h[t] = state.h;
  }

  std::vector<Tensor> rows(n);
  for (std::size_t t = 0; t < n; ++t) rows[t] = concat(fwd_h[t], bwd_h[t], 1);
  return stack_rows(rows);
}

SeqProjectionParams SeqProjectionParams::init(std::size_t in, std::size_t out, Rng& rng) {
  SeqProjectionParams p;
  p.weight = trainable(xavier_init(in, out, rng));
  p.bias = Tensor::zeros({1, out}, true);
  return p;
}

ImageAdapterParams ImageAdapterParams::init(std::size_t in, std::size_t out, Rng& rng) {
  ImageAdapterParams p;
  p.weight = trainable(xavier_init(in, out, rng));
  p.bias = Tensor::zeros({1, out}, true);
  return p;
}

Tensor encode_text(const Tensor& stack, const ScalarMixParams& mix, const BiLstmParams& lstm,
                   const SeqProjectionParams& proj) {
  return affine(bilstm_forward(scalar_mix(stack, mix), lstm), proj.weight, proj.bias);
}

Tensor encode_image(const Tensor& regions, const ImageAdapterParams& adapter) {
  return transpose(affine(regions, adapter.weight, adapter.bias));
}

}  // namespace mmf
