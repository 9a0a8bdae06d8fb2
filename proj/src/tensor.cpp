#include "mmf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mmf {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

// Creates the output node; links it into the graph only when recording is on
// and some parent requires grad.
Tensor make_node(std::vector<std::size_t> shape, std::vector<double> data,
                 std::vector<TensorImplPtr> parents,
                 std::function<void(TensorImpl&)> backward_fn) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p->requires_grad) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    impl->requires_grad = true;
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradScope::NoGradScope() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_product(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_product(shape) != data.size()) {
    throw ShapeError("Tensor: " + std::to_string(data.size()) + " values do not fill shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (size() != 1) {
    throw ShapeError("value: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return impl_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::detached() const {
  return from_data(impl_->shape, impl_->data, false);
}

Tensor Tensor::deep_copy(bool requires_grad) const {
  return from_data(impl_->shape, impl_->data, requires_grad);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: rank-2 operands required, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = out.data() + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = pa[i * k + kk];
        const double* brow = pb + kk * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  auto ia = a.impl();
  auto ib = b.impl();
  return make_node({m, n}, std::move(out), {ia, ib}, [ia, ib, m, k, n](TensorImpl& self) {
    const double* g = self.grad.data();
    if (ia->requires_grad) {
      ia->ensure_grad();
      double* da = ia->grad.data();
      const double* pb = ib->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* brow = pb + kk * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          da[i * k + kk] += acc;
        }
      }
    }
    if (ib->requires_grad) {
      ib->ensure_grad();
      double* db = ib->grad.data();
      const double* pa = ia->data.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av = pa[i * k + kk];
          double* dbrow = db + kk * n;
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  auto ia = a.impl();
  auto ib = b.impl();
  return make_node(a.shape(), std::move(out), {ia, ib}, [ia, ib](TensorImpl& self) {
    if (ia->requires_grad) {
      ia->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += self.grad[i];
    }
    if (ib->requires_grad) {
      ib->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  auto ia = a.impl();
  auto ib = b.impl();
  return make_node(a.shape(), std::move(out), {ia, ib}, [ia, ib](TensorImpl& self) {
    if (ia->requires_grad) {
      ia->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += self.grad[i];
    }
    if (ib->requires_grad) {
      ib->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  auto ia = a.impl();
  auto ib = b.impl();
  return make_node(a.shape(), std::move(out), {ia, ib}, [ia, ib](TensorImpl& self) {
    if (ia->requires_grad) {
      ia->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += self.grad[i] * ib->data[i];
    }
    if (ib->requires_grad) {
      ib->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ib->grad[i] += self.grad[i] * ia->data[i];
    }
  });
}

Tensor scalar_mul(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.at(i);
  auto ia = a.impl();
  return make_node(a.shape(), std::move(out), {ia}, [ia, c](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += c * self.grad[i];
  });
}

Tensor scale(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) {
    throw ShapeError("scale: scale factor of shape " + shape_str(s.shape()) + " is not a scalar");
  }
  const double sv = s.at(0);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * a.at(i);
  auto ia = a.impl();
  auto is = s.impl();
  return make_node(a.shape(), std::move(out), {ia, is}, [ia, is, sv](TensorImpl& self) {
    if (ia->requires_grad) {
      ia->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += sv * self.grad[i];
    }
    if (is->requires_grad) {
      is->ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * ia->data[i];
      is->grad[0] += acc;
    }
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
  auto ia = a.impl();
  return make_node(a.shape(), std::move(out), {ia}, [ia](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      ia->grad[i] += (1.0 - y * y) * self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  auto ia = a.impl();
  return make_node(a.shape(), std::move(out), {ia}, [ia](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      ia->grad[i] += y * (1.0 - y) * self.grad[i];
    }
  });
}

Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    if (!(x > 0.0)) {
      throw NumericError("log: nonpositive entry " + std::to_string(x) + " at index " +
                         std::to_string(i));
    }
    out[i] = std::log(x);
  }
  auto ia = a.impl();
  return make_node(a.shape(), std::move(out), {ia}, [ia](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ia->grad[i] += self.grad[i] / ia->data[i];
  });
}

namespace {

// Treats the tensor as slices along `axis`: `count` independent softmax
// problems, each of `len` entries spaced `stride` apart.
struct AxisView {
  std::size_t count, len, stride, block;
};

AxisView axis_view(const std::vector<std::size_t>& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer * inner, shape[axis], inner, shape[axis] * inner};
}

// slice s (of count) starts at (s / inner) * block + (s % inner)
std::size_t slice_base(const AxisView& v, std::size_t s) {
  const std::size_t inner = v.stride;
  return (s / inner) * v.block + (s % inner);
}

}  // namespace

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisView v = axis_view(a.shape(), axis, "softmax");
  std::vector<double> out(a.size());
  const double* px = a.data().data();
  for (std::size_t s = 0; s < v.count; ++s) {
    const std::size_t base = slice_base(v, s);
    double mx = px[base];
    for (std::size_t i = 1; i < v.len; ++i) mx = std::max(mx, px[base + i * v.stride]);
    double denom = 0.0;
    for (std::size_t i = 0; i < v.len; ++i) {
      const double e = std::exp(px[base + i * v.stride] - mx);
      out[base + i * v.stride] = e;
      denom += e;
    }
    for (std::size_t i = 0; i < v.len; ++i) out[base + i * v.stride] /= denom;
  }
  auto ia = a.impl();
  return make_node(a.shape(), std::move(out), {ia}, [ia, v](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t s = 0; s < v.count; ++s) {
      const std::size_t base = slice_base(v, s);
      double dot = 0.0;
      for (std::size_t i = 0; i < v.len; ++i) {
        const std::size_t idx = base + i * v.stride;
        dot += self.grad[idx] * self.data[idx];
      }
      for (std::size_t i = 0; i < v.len; ++i) {
        const std::size_t idx = base + i * v.stride;
        ia->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
      }
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank()) {
    throw ShapeError("concat: rank mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  if (axis >= a.rank()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(a.shape()));
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.shape()[i] != b.shape()[i]) {
      throw ShapeError("concat: non-axis extents differ: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
    }
  }
  std::vector<std::size_t> out_shape = a.shape();
  out_shape[axis] += b.shape()[axis];

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  const std::size_t ablk = a.shape()[axis] * inner;
  const std::size_t bblk = b.shape()[axis] * inner;

  std::vector<double> out(a.size() + b.size());
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * ablk, ablk, out.data() + o * (ablk + bblk));
    std::copy_n(b.data().data() + o * bblk, bblk, out.data() + o * (ablk + bblk) + ablk);
  }
  auto ia = a.impl();
  auto ib = b.impl();
  return make_node(std::move(out_shape), std::move(out), {ia, ib},
                   [ia, ib, outer, ablk, bblk](TensorImpl& self) {
                     for (std::size_t o = 0; o < outer; ++o) {
                       const double* g = self.grad.data() + o * (ablk + bblk);
                       if (ia->requires_grad) {
                         ia->ensure_grad();
                         for (std::size_t i = 0; i < ablk; ++i) ia->grad[o * ablk + i] += g[i];
                       }
                       if (ib->requires_grad) {
                         ib->ensure_grad();
                         for (std::size_t i = 0; i < bblk; ++i)
                           ib->grad[o * bblk + i] += g[ablk + i];
                       }
                     }
                   });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows given");
  const std::size_t w = rows[0].rank() == 2 ? rows[0].shape()[1] : 0;
  std::size_t total = 0;
  for (const Tensor& r : rows) {
    if (r.rank() != 2 || r.shape()[1] != w) {
      throw ShapeError("stack_rows: row of shape " + shape_str(r.shape()) +
                       " does not match width " + std::to_string(w));
    }
    total += r.shape()[0];
  }
  std::vector<double> out;
  out.reserve(total * w);
  std::vector<TensorImplPtr> parents;
  parents.reserve(rows.size());
  for (const Tensor& r : rows) {
    out.insert(out.end(), r.data().begin(), r.data().end());
    parents.push_back(r.impl());
  }
  auto parents_copy = parents;
  return make_node({total, w}, std::move(out), std::move(parents),
                   [parents = std::move(parents_copy)](TensorImpl& self) {
                     std::size_t off = 0;
                     for (const auto& p : parents) {
                       const std::size_t n = p->data.size();
                       if (p->requires_grad) {
                         p->ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) p->grad[i] += self.grad[off + i];
                       }
                       off += n;
                     }
                   });
}

Tensor row(const Tensor& a, std::size_t r) {
  if (a.rank() != 2) {
    throw ShapeError("row: rank-2 tensor required, got " + shape_str(a.shape()));
  }
  if (r >= a.shape()[0]) {
    throw ShapeError("row: index " + std::to_string(r) + " out of range for " +
                     shape_str(a.shape()));
  }
  const std::size_t w = a.shape()[1];
  std::vector<double> out(a.data().begin() + r * w, a.data().begin() + (r + 1) * w);
  auto ia = a.impl();
  return make_node({1, w}, std::move(out), {ia}, [ia, r, w](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t i = 0; i < w; ++i) ia->grad[r * w + i] += self.grad[i];
  });
}

Tensor slice_layer(const Tensor& stack, std::size_t layer) {
  if (stack.rank() != 3) {
    throw ShapeError("slice_layer: rank-3 tensor required, got " + shape_str(stack.shape()));
  }
  if (layer >= stack.shape()[0]) {
    throw ShapeError("slice_layer: layer " + std::to_string(layer) + " out of range for " +
                     shape_str(stack.shape()));
  }
  const std::size_t n = stack.shape()[1], d = stack.shape()[2];
  const std::size_t block = n * d;
  std::vector<double> out(stack.data().begin() + layer * block,
                          stack.data().begin() + (layer + 1) * block);
  auto is = stack.impl();
  return make_node({n, d}, std::move(out), {is}, [is, layer, block](TensorImpl& self) {
    if (!is->requires_grad) return;
    is->ensure_grad();
    for (std::size_t i = 0; i < block; ++i) is->grad[layer * block + i] += self.grad[i];
  });
}

Tensor pick(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.size()) {
    throw ShapeError("pick: index " + std::to_string(flat_index) + " out of range for " +
                     shape_str(a.shape()));
  }
  auto ia = a.impl();
  return make_node({1}, {a.at(flat_index)}, {ia}, [ia, flat_index](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    ia->grad[flat_index] += self.grad[0];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw ShapeError("transpose: rank-2 tensor required, got " + shape_str(a.shape()));
  }
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.at(i * n + j);
  auto ia = a.impl();
  return make_node({n, m}, std::move(out), {ia}, [ia, m, n](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ia->grad[i * n + j] += self.grad[j * m + i];
  });
}

Tensor reduce_sum(const Tensor& a, std::size_t axis) {
  const AxisView v = axis_view(a.shape(), axis, "reduce_sum");
  std::vector<std::size_t> out_shape = a.shape();
  out_shape[axis] = 1;
  std::vector<double> out(v.count, 0.0);
  for (std::size_t s = 0; s < v.count; ++s) {
    const std::size_t base = slice_base(v, s);
    double acc = 0.0;
    for (std::size_t i = 0; i < v.len; ++i) acc += a.at(base + i * v.stride);
    out[s] = acc;
  }
  auto ia = a.impl();
  return make_node(std::move(out_shape), std::move(out), {ia}, [ia, v](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t s = 0; s < v.count; ++s) {
      const std::size_t base = slice_base(v, s);
      for (std::size_t i = 0; i < v.len; ++i) ia->grad[base + i * v.stride] += self.grad[s];
    }
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  auto ia = a.impl();
  return make_node({1}, {acc}, {ia}, [ia](TensorImpl& self) {
    if (!ia->requires_grad) return;
    ia->ensure_grad();
    for (std::size_t i = 0; i < ia->grad.size(); ++i) ia->grad[i] += self.grad[0];
  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2) {
    throw ShapeError("affine: rank-2 input and weight required, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  const std::size_t m = x.shape()[0], din = x.shape()[1], dout = w.shape()[1];
  if (w.shape()[0] != din) {
    throw ShapeError("affine: input width " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  if (b.size() != dout) {
    throw ShapeError("affine: bias of shape " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  std::vector<double> out(m * dout);
  {
    const double* px = x.data().data();
    const double* pw = w.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = out.data() + i * dout;
      std::copy_n(pb, dout, orow);
      for (std::size_t kk = 0; kk < din; ++kk) {
        const double xv = px[i * din + kk];
        const double* wrow = pw + kk * dout;
        for (std::size_t j = 0; j < dout; ++j) orow[j] += xv * wrow[j];
      }
    }
  }
  auto ix = x.impl();
  auto iw = w.impl();
  auto ib = b.impl();
  return make_node({m, dout}, std::move(out), {ix, iw, ib},
                   [ix, iw, ib, m, din, dout](TensorImpl& self) {
                     const double* g = self.grad.data();
                     if (ix->requires_grad) {
                       ix->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g + i * dout;
                         for (std::size_t kk = 0; kk < din; ++kk) {
                           const double* wrow = iw->data.data() + kk * dout;
                           double acc = 0.0;
                           for (std::size_t j = 0; j < dout; ++j) acc += grow[j] * wrow[j];
                           ix->grad[i * din + kk] += acc;
                         }
                       }
                     }
                     if (iw->requires_grad) {
                       iw->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g + i * dout;
                         for (std::size_t kk = 0; kk < din; ++kk) {
                           const double xv = ix->data[i * din + kk];
                           double* dwrow = iw->grad.data() + kk * dout;
                           for (std::size_t j = 0; j < dout; ++j) dwrow[j] += xv * grow[j];
                         }
                       }
                     }
                     if (ib->requires_grad) {
                       ib->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* grow = g + i * dout;
                         for (std::size_t j = 0; j < dout; ++j) ib->grad[j] += grow[j];
                       }
                     }
                   });
}

Tensor layer_norm_rows(const Tensor& x, double eps) {
  if (x.rank() != 2) {
    throw ShapeError("layer_norm_rows: rank-2 tensor required, got " + shape_str(x.shape()));
  }
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  std::vector<double> out(m * d);
  std::vector<double> inv_sd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sd[i] = inv;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (xr[j] - mean) * inv;
  }
  auto ix = x.impl();
  return make_node({m, d}, std::move(out), {ix},
                   [ix, m, d, inv_sd = std::move(inv_sd)](TensorImpl& self) {
                     if (!ix->requires_grad) return;
                     ix->ensure_grad();
                     for (std::size_t i = 0; i < m; ++i) {
                       const double* gy = self.grad.data() + i * d;
                       const double* y = self.data.data() + i * d;
                       double mg = 0.0, mgy = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         mg += gy[j];
                         mgy += gy[j] * y[j];
                       }
                       mg /= static_cast<double>(d);
                       mgy /= static_cast<double>(d);
                       for (std::size_t j = 0; j < d; ++j) {
                         ix->grad[i * d + j] += inv_sd[i] * (gy[j] - mg - y[j] * mgy);
                       }
                     }
                   });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("(undefined)")));
  }
  TensorImpl* root = loss.impl().get();
  const bool bare_leaf = root->requires_grad && !root->consumed && root->parents.empty() &&
                         !root->backward_fn;
  if (!root->backward_fn && !bare_leaf) {
    throw DataError("backward: loss is detached from any graph");
  }

  GradGraph graph;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      graph.order.push_back(f.node);
      stack.pop_back();
    }
  }
  graph.topologically_sorted = true;

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = graph.order.rbegin(); it != graph.order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // consume: drop links; only leaves keep their gradients
  for (TensorImpl* node : graph.order) {
    const bool leaf = node->parents.empty();
    node->backward_fn = nullptr;
    node->parents.clear();
    if (!leaf) {
      node->consumed = true;
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

Tensor xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
  return xavier_init_fans({rows, cols}, rows, cols, rng);
}

Tensor xavier_init_fans(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                        Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_init(std::move(shape), -bound, bound, rng);
}

Tensor uniform_init(std::vector<std::size_t> shape, double lo, double hi, Rng& rng) {
  std::vector<double> data(shape_product(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

Tensor normal_init(std::vector<std::size_t> shape, double mu, double sigma, Rng& rng) {
  std::vector<double> data(shape_product(shape));
  for (double& v : data) v = rng.normal(mu, sigma);
  return Tensor::from_data(std::move(shape), std::move(data));
}

double finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                         double step) {
  for (Tensor& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  NoGradScope ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + step;
      const double f_plus = loss_fn().value();
      p.data()[i] = orig - step;
      const double f_minus = loss_fn().value();
      p.data()[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace mmf
