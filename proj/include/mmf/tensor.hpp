#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mmf/errors.hpp"
#include "mmf/rng.hpp"

namespace mmf {

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// One node of the reverse-mode graph. Leaves hold parameters or inputs;
// interior nodes carry a closure that pushes the node's gradient into its
// parents. The closure must never capture the node it belongs to (it receives
// it as the argument) or the graph would leak through a reference cycle.
struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;          // row-major
  std::vector<double> grad;          // sized on first use; retained for leaves
  bool requires_grad = false;
  bool consumed = false;             // interior node already swept by backward
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::size_t size() const { return data.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

// Dense row-major tensor handle with value-like copy of the handle itself;
// copies share storage. Use deep_copy for an independent leaf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double at(std::size_t flat) const { return impl_->data[flat]; }

  // scalar tensors only
  double value() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // same data, fresh leaf, no graph links
  Tensor detached() const;
  Tensor deep_copy(bool requires_grad = false) const;

  const TensorImplPtr& impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Ordered record of one backward traversal. Construction guarantees every
// node's parents precede it in `order`.
struct GradGraph {
  std::vector<TensorImpl*> order;
  bool topologically_sorted = false;
};

// Disables graph recording for the lifetime of the scope (forward-only eval).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

std::string shape_str(const std::vector<std::size_t>& shape);

// elementwise and matrix operations; each registers on the graph when any
// operand requires grad and recording is enabled
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double c);
Tensor scale(const Tensor& a, const Tensor& s);  // s is a trainable scalar
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);
Tensor stack_rows(const std::vector<Tensor>& rows);  // vertical concat
Tensor row(const Tensor& a, std::size_t r);          // 1 x w view-copy of a 2-D tensor
Tensor slice_layer(const Tensor& stack, std::size_t layer);  // rank-3 -> rank-2
Tensor pick(const Tensor& a, std::size_t flat_index);        // -> scalar
Tensor transpose(const Tensor& a);
Tensor reduce_sum(const Tensor& a, std::size_t axis);  // keeps rank, extent -> 1
Tensor sum(const Tensor& a);                           // -> scalar
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor layer_norm_rows(const Tensor& x, double eps = 1e-6);

// Assigns grad on every requires_grad leaf reachable from loss, then consumes
// the graph (links cleared, intermediate grads dropped). Gradients accumulate
// into leaves that already hold one; call zero_grad between steps.
void backward(const Tensor& loss);

// initializers; draw order is flat row-major
Tensor xavier_init(std::size_t rows, std::size_t cols, Rng& rng);
Tensor xavier_init_fans(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                        Rng& rng);
Tensor uniform_init(std::vector<std::size_t> shape, double lo, double hi, Rng& rng);
Tensor normal_init(std::vector<std::size_t> shape, double mu, double sigma, Rng& rng);

// Compares the analytic gradient of loss_fn with central differences for
// every coordinate of every listed parameter. Returns the worst relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                         double step = 1e-5);

}  // namespace mmf
