#include "gcav/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gcav {

namespace detail {

float* TensorImpl::grad_buf() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  return grad.data();
}

Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

}  // namespace detail

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

thread_local Tape* g_active_tape = nullptr;

int64_t shape_size(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

void validate_shape(const Shape& shape, const char* op) {
  if (shape.empty()) throw std::invalid_argument(std::string(op) + ": empty shape");
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument(std::string(op) + ": non-positive dim");
  }
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

ImplPtr make_impl(const Shape& shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data.assign(static_cast<size_t>(shape_size(shape)), 0.0f);
  return impl;
}

void check_finite(const ImplPtr& t, const char* op) {
  for (float v : t->data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value in output");
    }
  }
}

struct OpOut {
  Tensor tensor;
  ImplPtr impl;
  bool track;
};

OpOut op_output(const Shape& shape, std::initializer_list<const Tensor*> inputs) {
  bool any = false;
  for (const Tensor* t : inputs) {
    if (!t->defined()) throw std::invalid_argument("op: undefined input tensor");
    any = any || t->requires_grad();
  }
  bool track = any && g_active_tape != nullptr;
  ImplPtr impl = make_impl(shape);
  impl->requires_grad = any;
  if (track) g_active_tape->note_output(impl);
  return OpOut{detail::wrap(impl), impl, track};
}

void record(std::function<void()> fn) { g_active_tape->record(std::move(fn)); }

// rank-2 view helpers: 1-D tensors act as a single row
int view_rows(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(0); }
int view_cols(const Tensor& t) {
  if (t.rank() == 1) return t.dim(0);
  if (t.rank() == 2) return t.dim(1);
  throw std::invalid_argument("op: expected rank 1 or 2 tensor");
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

const Shape& Tensor::shape() const {
  if (!impl_) throw std::invalid_argument("tensor: undefined");
  return impl_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int Tensor::dim(int i) const { return shape().at(static_cast<size_t>(i)); }

int64_t Tensor::size() const { return impl_ ? impl_->size() : 0; }

int Tensor::rows() const { return view_rows(*this); }

int Tensor::cols() const { return view_cols(*this); }

float* Tensor::data() {
  if (!impl_) throw std::invalid_argument("tensor: undefined");
  return impl_->data.data();
}

const float* Tensor::data() const {
  if (!impl_) throw std::invalid_argument("tensor: undefined");
  return impl_->data.data();
}

float Tensor::at(int i) const { return data()[i]; }

float Tensor::at(int i, int j) const {
  return data()[static_cast<int64_t>(i) * cols() + j];
}

float Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return data()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!impl_) throw std::invalid_argument("tensor: undefined");
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
  return *this;
}

float* Tensor::grad() {
  if (!impl_) throw std::invalid_argument("tensor: undefined");
  return impl_->grad_buf();
}

const float* Tensor::grad() const {
  if (!impl_ || impl_->grad.empty()) return nullptr;
  return impl_->grad.data();
}

Tensor Tensor::grad_tensor() const {
  Tensor g = Tensor::zeros(shape());
  if (impl_ && !impl_->grad.empty()) {
    std::copy(impl_->grad.begin(), impl_->grad.end(), g.data());
  }
  return g;
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  Tensor t = Tensor::from(shape(), impl_->data);
  t.set_requires_grad(requires_grad());
  return t;
}

Tensor Tensor::detach() const { return Tensor::from(shape(), impl_->data); }

Tensor Tensor::zeros(const Shape& shape) {
  validate_shape(shape, "zeros");
  return detail::wrap(make_impl(shape));
}

Tensor Tensor::full(const Shape& shape, float value) {
  Tensor t = zeros(shape);
  std::fill_n(t.data(), t.size(), value);
  return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<float> values) {
  validate_shape(shape, "from");
  if (shape_size(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("from: shape/value count mismatch");
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw std::runtime_error("from: non-finite value");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  return detail::wrap(impl);
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

Tensor Tensor::randn(const Shape& shape, RngStream& rng, float stddev) {
  Tensor t = zeros(shape);
  float* d = t.data();
  for (int64_t i = 0; i < t.size(); ++i) d[i] = stddev * rng.gaussian();
  return t;
}

Tensor Tensor::runif(const Shape& shape, RngStream& rng, float lo, float hi) {
  Tensor t = zeros(shape);
  float* d = t.data();
  for (int64_t i = 0; i < t.size(); ++i) d[i] = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t = zeros({n, n});
  for (int i = 0; i < n; ++i) t.data()[static_cast<int64_t>(i) * n + i] = 1.0f;
  return t;
}

// ---- Tape -------------------------------------------------------------------

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> backward_fn) {
  ops_.push_back(std::move(backward_fn));
}

void Tape::note_output(const ImplPtr& impl) { outputs_.push_back(impl); }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  if (!loss.requires_grad()) return;  // detached from every grad leaf
  // intermediate grads are per-pass scratch; only leaves accumulate
  for (auto& o : outputs_) {
    if (!o->grad.empty()) std::fill(o->grad.begin(), o->grad.end(), 0.0f);
  }
  loss.impl()->grad_buf()[0] += 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a, b);
  auto out = op_output(a.shape(), {&a, &b});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
  check_finite(out.impl, "add");
  if (out.track) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl;
    record([ia, ib, io] {
      const float* g = io->grad_buf();
      if (ia->requires_grad) {
        float* ga = ia->grad_buf();
        for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g[i];
      }
      if (ib->requires_grad) {
        float* gb = ib->grad_buf();
        for (int64_t i = 0; i < ib->size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out.tensor;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a, b);
  auto out = op_output(a.shape(), {&a, &b});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] - pb[i];
  check_finite(out.impl, "sub");
  if (out.track) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl;
    record([ia, ib, io] {
      const float* g = io->grad_buf();
      if (ia->requires_grad) {
        float* ga = ia->grad_buf();
        for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g[i];
      }
      if (ib->requires_grad) {
        float* gb = ib->grad_buf();
        for (int64_t i = 0; i < ib->size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out.tensor;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  auto out = op_output(a.shape(), {&a, &b});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i];
  check_finite(out.impl, "mul");
  if (out.track) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl;
    record([ia, ib, io] {
      const float* g = io->grad_buf();
      if (ia->requires_grad) {
        float* ga = ia->grad_buf();
        for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g[i] * ib->data[i];
      }
      if (ib->requires_grad) {
        float* gb = ib->grad_buf();
        for (int64_t i = 0; i < ib->size(); ++i) gb[i] += g[i] * ia->data[i];
      }
    });
  }
  return out.tensor;
}

Tensor scale(const Tensor& a, float s) {
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * s;
  check_finite(out.impl, "scale");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, s] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g[i] * s;
    });
  }
  return out.tensor;
}

Tensor add_scalar(const Tensor& a, float s) {
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + s;
  check_finite(out.impl, "add_scalar");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g[i];
    });
  }
  return out.tensor;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0f); }

// ---- linear algebra -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul: expected rank-2 tensors");
  }
  if (a.dim(1) != b.dim(0)) shape_error("matmul", a, b);
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = op_output({m, n}, {&a, &b});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.impl->data.data();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) po[static_cast<int64_t>(i) * n + j] = 0.0f;
    for (int p = 0; p < k; ++p) {
      const float av = pa[static_cast<int64_t>(i) * k + p];
      const float* brow = pb + static_cast<int64_t>(p) * n;
      float* orow = po + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  check_finite(out.impl, "matmul");
  if (out.track) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl;
    record([ia, ib, io, m, k, n] {
      const float* g = io->grad_buf();
      if (ia->requires_grad) {
        float* ga = ia->grad_buf();
        const float* pb2 = ib->data.data();
        for (int i = 0; i < m; ++i) {
          for (int p = 0; p < k; ++p) {
            float acc = 0.0f;
            const float* grow = g + static_cast<int64_t>(i) * n;
            const float* brow = pb2 + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<int64_t>(i) * k + p] += acc;
          }
        }
      }
      if (ib->requires_grad) {
        float* gb = ib->grad_buf();
        const float* pa2 = ia->data.data();
        for (int p = 0; p < k; ++p) {
          for (int i = 0; i < m; ++i) {
            const float av = pa2[static_cast<int64_t>(i) * k + p];
            const float* grow = g + static_cast<int64_t>(i) * n;
            float* brow = gb + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out.tensor;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  auto out = op_output({n, m}, {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[static_cast<int64_t>(j) * m + i] = pa[static_cast<int64_t>(i) * n + j];
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, m, n] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<int64_t>(i) * n + j] += g[static_cast<int64_t>(j) * m + i];
    });
  }
  return out.tensor;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  validate_shape(shape, "reshape");
  if (shape_size(shape) != a.size()) {
    throw std::invalid_argument("reshape: size mismatch");
  }
  auto out = op_output(shape, {&a});
  std::copy_n(a.data(), a.size(), out.impl->data.data());
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g[i];
    });
  }
  return out.tensor;
}

Tensor add_rowwise(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 1 || a.dim(1) != b.dim(0)) {
    shape_error("add_rowwise", a, b);
  }
  const int m = a.dim(0), n = a.dim(1);
  auto out = op_output({m, n}, {&a, &b});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.impl->data.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      po[static_cast<int64_t>(i) * n + j] = pa[static_cast<int64_t>(i) * n + j] + pb[j];
  check_finite(out.impl, "add_rowwise");
  if (out.track) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl;
    record([ia, ib, io, m, n] {
      const float* g = io->grad_buf();
      if (ia->requires_grad) {
        float* ga = ia->grad_buf();
        for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) ga[i] += g[i];
      }
      if (ib->requires_grad) {
        float* gb = ib->grad_buf();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += g[static_cast<int64_t>(i) * n + j];
      }
    });
  }
  return out.tensor;
}

// ---- activations --------------------------------------------------------------

Tensor relu(const Tensor& a) {
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) {
        if (ia->data[i] > 0.0f) ga[i] += g[i];
      }
    });
  }
  return out.tensor;
}

Tensor gelu(const Tensor& a) {
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  constexpr float kInvSqrt2 = 0.70710678118654752440f;
  for (int64_t i = 0; i < a.size(); ++i) {
    po[i] = 0.5f * pa[i] * (1.0f + std::erf(pa[i] * kInvSqrt2));
  }
  check_finite(out.impl, "gelu");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      constexpr float kInvSqrt2pi = 0.39894228040143267794f;
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) {
        const float x = ia->data[i];
        const float cdf = 0.5f * (1.0f + std::erf(x * 0.70710678118654752440f));
        const float pdf = kInvSqrt2pi * std::exp(-0.5f * x * x);
        ga[i] += g[i] * (cdf + x * pdf);
      }
    });
  }
  return out.tensor;
}

Tensor sigmoid(const Tensor& a) {
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) {
    po[i] = 1.0f / (1.0f + std::exp(-pa[i]));
  }
  check_finite(out.impl, "sigmoid");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) {
        const float y = io->data[i];
        ga[i] += g[i] * y * (1.0f - y);
      }
    });
  }
  return out.tensor;
}

Tensor softplus(const Tensor& a) {
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) {
    const float x = pa[i];
    po[i] = std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x)));
  }
  check_finite(out.impl, "softplus");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) {
        ga[i] += g[i] / (1.0f + std::exp(-ia->data[i]));
      }
    });
  }
  return out.tensor;
}

Tensor exp_elem(const Tensor& a) {
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = std::exp(pa[i]);
  check_finite(out.impl, "exp");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g[i] * io->data[i];
    });
  }
  return out.tensor;
}

// ---- row-wise normalizers -------------------------------------------------------

Tensor softmax_rows(const Tensor& a) {
  const int m = view_rows(a), n = view_cols(a);
  if (n == 0) throw std::invalid_argument("softmax: zero-length axis");
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int i = 0; i < m; ++i) {
    const float* row = pa + static_cast<int64_t>(i) * n;
    float* orow = po + static_cast<int64_t>(i) * n;
    float mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    const float inv = static_cast<float>(1.0 / s);
    for (int j = 0; j < n; ++j) orow[j] *= inv;
  }
  check_finite(out.impl, "softmax");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, m, n] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int i = 0; i < m; ++i) {
        const float* prow = io->data.data() + static_cast<int64_t>(i) * n;
        const float* grow = g + static_cast<int64_t>(i) * n;
        float* garow = ga + static_cast<int64_t>(i) * n;
        double gp = 0.0;
        for (int j = 0; j < n; ++j) gp += static_cast<double>(grow[j]) * prow[j];
        for (int j = 0; j < n; ++j) {
          garow[j] += prow[j] * (grow[j] - static_cast<float>(gp));
        }
      }
    });
  }
  return out.tensor;
}

Tensor log_softmax_rows(const Tensor& a) {
  const int m = view_rows(a), n = view_cols(a);
  if (n == 0) throw std::invalid_argument("log_softmax: zero-length axis");
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int i = 0; i < m; ++i) {
    const float* row = pa + static_cast<int64_t>(i) * n;
    float* orow = po + static_cast<int64_t>(i) * n;
    float mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    const float lse = mx + static_cast<float>(std::log(s));
    for (int j = 0; j < n; ++j) orow[j] = row[j] - lse;
  }
  check_finite(out.impl, "log_softmax");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, m, n] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int i = 0; i < m; ++i) {
        const float* yrow = io->data.data() + static_cast<int64_t>(i) * n;
        const float* grow = g + static_cast<int64_t>(i) * n;
        float* garow = ga + static_cast<int64_t>(i) * n;
        double gs = 0.0;
        for (int j = 0; j < n; ++j) gs += grow[j];
        for (int j = 0; j < n; ++j) {
          garow[j] += grow[j] - std::exp(yrow[j]) * static_cast<float>(gs);
        }
      }
    });
  }
  return out.tensor;
}

Tensor layer_norm(const Tensor& a, float eps) {
  const int m = view_rows(a), n = view_cols(a);
  if (n == 0) throw std::invalid_argument("layer_norm: zero-length axis");
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  std::vector<float> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const float* row = pa + static_cast<int64_t>(i) * n;
    float* orow = po + static_cast<int64_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var /= n;
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[i] = inv;
    for (int j = 0; j < n; ++j) orow[j] = static_cast<float>((row[j] - mu)) * inv;
  }
  check_finite(out.impl, "layer_norm");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, m, n, inv_std = std::move(inv_std)] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int i = 0; i < m; ++i) {
        const float* yrow = io->data.data() + static_cast<int64_t>(i) * n;
        const float* grow = g + static_cast<int64_t>(i) * n;
        float* garow = ga + static_cast<int64_t>(i) * n;
        double mg = 0.0, mgy = 0.0;
        for (int j = 0; j < n; ++j) {
          mg += grow[j];
          mgy += static_cast<double>(grow[j]) * yrow[j];
        }
        mg /= n;
        mgy /= n;
        for (int j = 0; j < n; ++j) {
          garow[j] += inv_std[i] * static_cast<float>(grow[j] - mg - yrow[j] * mgy);
        }
      }
    });
  }
  return out.tensor;
}

// ---- reductions ----------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  auto out = op_output({1}, {&a});
  double s = 0.0;
  const float* pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) s += pa[i];
  out.impl->data[0] = static_cast<float>(s);
  check_finite(out.impl, "sum");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      const float g = io->grad_buf()[0];
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g;
    });
  }
  return out.tensor;
}

Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  auto out = op_output({1}, {&a});
  double s = 0.0;
  const float* pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) s += pa[i];
  out.impl->data[0] = static_cast<float>(s / static_cast<double>(a.size()));
  check_finite(out.impl, "mean");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io] {
      const float g = io->grad_buf()[0] / static_cast<float>(ia->size());
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g;
    });
  }
  return out.tensor;
}

Tensor mean_axis0(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("mean_axis0: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  auto out = op_output({n}, {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += pa[static_cast<int64_t>(i) * n + j];
    po[j] = static_cast<float>(s / m);
  }
  check_finite(out.impl, "mean_axis0");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, m, n] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<int64_t>(i) * n + j] += g[j] / static_cast<float>(m);
    });
  }
  return out.tensor;
}

Tensor variance_all(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("variance: empty tensor");
  auto out = op_output({1}, {&a});
  const float* pa = a.data();
  const int64_t n = a.size();
  double mu = 0.0;
  for (int64_t i = 0; i < n; ++i) mu += pa[i];
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pa[i] - mu;
    var += d * d;
  }
  out.impl->data[0] = static_cast<float>(var / static_cast<double>(n));
  check_finite(out.impl, "variance");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    const float muf = static_cast<float>(mu);
    record([ia, io, muf] {
      const float g = io->grad_buf()[0];
      float* ga = ia->grad_buf();
      const float inv_n = 1.0f / static_cast<float>(ia->size());
      for (int64_t i = 0; i < ia->size(); ++i) {
        ga[i] += g * 2.0f * (ia->data[i] - muf) * inv_n;
      }
    });
  }
  return out.tensor;
}

Tensor variance_rows(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("variance_rows: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  if (n == 0) throw std::invalid_argument("variance_rows: zero-length axis");
  auto out = op_output({m}, {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  std::vector<float> mus(m);
  for (int i = 0; i < m; ++i) {
    const float* row = pa + static_cast<int64_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    mus[i] = static_cast<float>(mu);
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    po[i] = static_cast<float>(var / n);
  }
  check_finite(out.impl, "variance_rows");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, m, n, mus = std::move(mus)] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      const float inv_n = 1.0f / static_cast<float>(n);
      for (int i = 0; i < m; ++i) {
        const float* row = ia->data.data() + static_cast<int64_t>(i) * n;
        float* garow = ga + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          garow[j] += g[i] * 2.0f * (row[j] - mus[i]) * inv_n;
        }
      }
    });
  }
  return out.tensor;
}

// ---- vector geometry ------------------------------------------------------------

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) shape_error("dot", a, b);
  auto out = op_output({1}, {&a, &b});
  const float* pa = a.data();
  const float* pb = b.data();
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += static_cast<double>(pa[i]) * pb[i];
  out.impl->data[0] = static_cast<float>(s);
  check_finite(out.impl, "dot");
  if (out.track) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl;
    record([ia, ib, io] {
      const float g = io->grad_buf()[0];
      if (ia->requires_grad) {
        float* ga = ia->grad_buf();
        for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g * ib->data[i];
      }
      if (ib->requires_grad) {
        float* gb = ib->grad_buf();
        for (int64_t i = 0; i < ib->size(); ++i) gb[i] += g * ia->data[i];
      }
    });
  }
  return out.tensor;
}

namespace {
constexpr double kNormEps = 1e-12;

double l2_norm(const float* p, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(p[i]) * p[i];
  return std::sqrt(s);
}
}  // namespace

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) shape_error("cosine_similarity", a, b);
  auto out = op_output({1}, {&a, &b});
  const float* pa = a.data();
  const float* pb = b.data();
  const int64_t n = a.size();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(pa[i]) * pb[i];
  const double na = l2_norm(pa, n) + kNormEps;
  const double nb = l2_norm(pb, n) + kNormEps;
  const double c = s / (na * nb);
  out.impl->data[0] = static_cast<float>(c);
  check_finite(out.impl, "cosine_similarity");
  if (out.track) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl;
    record([ia, ib, io, na, nb, c] {
      const float g = io->grad_buf()[0];
      const int64_t sz = ia->size();
      if (ia->requires_grad) {
        float* ga = ia->grad_buf();
        for (int64_t i = 0; i < sz; ++i) {
          const double term = ib->data[i] / (na * nb) - c * ia->data[i] / (na * na);
          ga[i] += g * static_cast<float>(term);
        }
      }
      if (ib->requires_grad) {
        float* gb = ib->grad_buf();
        for (int64_t i = 0; i < sz; ++i) {
          const double term = ia->data[i] / (na * nb) - c * ib->data[i] / (nb * nb);
          gb[i] += g * static_cast<float>(term);
        }
      }
    });
  }
  return out.tensor;
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("cosine_rows", a, b);
  const int m = view_rows(a), n = view_cols(a);
  auto out = op_output({m}, {&a, &b});
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.impl->data.data();
  std::vector<double> nas(m), nbs(m);
  for (int i = 0; i < m; ++i) {
    const float* ra = pa + static_cast<int64_t>(i) * n;
    const float* rb = pb + static_cast<int64_t>(i) * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += static_cast<double>(ra[j]) * rb[j];
    nas[i] = l2_norm(ra, n) + kNormEps;
    nbs[i] = l2_norm(rb, n) + kNormEps;
    po[i] = static_cast<float>(s / (nas[i] * nbs[i]));
  }
  check_finite(out.impl, "cosine_rows");
  if (out.track) {
    auto ia = a.impl(), ib = b.impl(), io = out.impl;
    record([ia, ib, io, m, n, nas = std::move(nas), nbs = std::move(nbs)] {
      const float* g = io->grad_buf();
      for (int i = 0; i < m; ++i) {
        const float* ra = ia->data.data() + static_cast<int64_t>(i) * n;
        const float* rb = ib->data.data() + static_cast<int64_t>(i) * n;
        const double c = io->data[i];
        if (ia->requires_grad) {
          float* garow = ia->grad_buf() + static_cast<int64_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const double term = rb[j] / (nas[i] * nbs[i]) - c * ra[j] / (nas[i] * nas[i]);
            garow[j] += g[i] * static_cast<float>(term);
          }
        }
        if (ib->requires_grad) {
          float* gbrow = ib->grad_buf() + static_cast<int64_t>(i) * n;
          for (int j = 0; j < n; ++j) {
            const double term = ra[j] / (nas[i] * nbs[i]) - c * rb[j] / (nbs[i] * nbs[i]);
            gbrow[j] += g[i] * static_cast<float>(term);
          }
        }
      }
    });
  }
  return out.tensor;
}

Tensor l2_normalize(const Tensor& a) {
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  const int64_t n = a.size();
  const double norm = l2_norm(pa, n) + kNormEps;
  const float inv = static_cast<float>(1.0 / norm);
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * inv;
  check_finite(out.impl, "l2_normalize");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, norm] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      const int64_t sz = ia->size();
      double ug = 0.0;
      for (int64_t i = 0; i < sz; ++i) ug += static_cast<double>(io->data[i]) * g[i];
      for (int64_t i = 0; i < sz; ++i) {
        ga[i] += static_cast<float>((g[i] - io->data[i] * ug) / norm);
      }
    });
  }
  return out.tensor;
}

Tensor l2_normalize_rows(const Tensor& a) {
  const int m = view_rows(a), n = view_cols(a);
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  std::vector<double> norms(m);
  for (int i = 0; i < m; ++i) {
    const float* row = pa + static_cast<int64_t>(i) * n;
    norms[i] = l2_norm(row, n) + kNormEps;
    const float inv = static_cast<float>(1.0 / norms[i]);
    float* orow = po + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = row[j] * inv;
  }
  check_finite(out.impl, "l2_normalize_rows");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, m, n, norms = std::move(norms)] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int i = 0; i < m; ++i) {
        const float* urow = io->data.data() + static_cast<int64_t>(i) * n;
        const float* grow = g + static_cast<int64_t>(i) * n;
        float* garow = ga + static_cast<int64_t>(i) * n;
        double ug = 0.0;
        for (int j = 0; j < n; ++j) ug += static_cast<double>(urow[j]) * grow[j];
        for (int j = 0; j < n; ++j) {
          garow[j] += static_cast<float>((grow[j] - urow[j] * ug) / norms[i]);
        }
      }
    });
  }
  return out.tensor;
}

// ---- concatenation / slicing ------------------------------------------------------

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  const int n = parts[0].cols();
  int total = 0;
  bool any = false;
  for (const Tensor& t : parts) {
    if (t.cols() != n) throw std::invalid_argument("concat: column mismatch");
    total += t.rows();
    any = any || t.requires_grad();
  }
  bool track = any && g_active_tape != nullptr;
  ImplPtr impl = make_impl({total, n});
  impl->requires_grad = any;
  if (track) g_active_tape->note_output(impl);
  float* po = impl->data.data();
  int r = 0;
  std::vector<ImplPtr> srcs;
  std::vector<int> offsets;
  for (const Tensor& t : parts) {
    std::copy_n(t.data(), t.size(), po + static_cast<int64_t>(r) * n);
    srcs.push_back(t.impl());
    offsets.push_back(r);
    r += t.rows();
  }
  if (track) {
    record([io = impl, srcs = std::move(srcs), offsets = std::move(offsets), n] {
      const float* g = io->grad_buf();
      for (size_t p = 0; p < srcs.size(); ++p) {
        if (!srcs[p]->requires_grad) continue;
        float* gp = srcs[p]->grad_buf();
        const int64_t count = srcs[p]->size();
        const float* gsrc = g + static_cast<int64_t>(offsets[p]) * n;
        for (int64_t i = 0; i < count; ++i) gp[i] += gsrc[i];
      }
    });
  }
  return detail::wrap(impl);
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  const int m = parts[0].rows();
  int total = 0;
  bool any = false;
  for (const Tensor& t : parts) {
    if (t.rows() != m) throw std::invalid_argument("concat: row mismatch");
    total += t.cols();
    any = any || t.requires_grad();
  }
  bool track = any && g_active_tape != nullptr;
  ImplPtr impl = make_impl({m, total});
  impl->requires_grad = any;
  if (track) g_active_tape->note_output(impl);
  float* po = impl->data.data();
  int c = 0;
  std::vector<ImplPtr> srcs;
  std::vector<int> offsets, widths;
  for (const Tensor& t : parts) {
    const int w = t.cols();
    for (int i = 0; i < m; ++i) {
      std::copy_n(t.data() + static_cast<int64_t>(i) * w, w,
                  po + static_cast<int64_t>(i) * total + c);
    }
    srcs.push_back(t.impl());
    offsets.push_back(c);
    widths.push_back(w);
    c += w;
  }
  if (track) {
    record([io = impl, srcs = std::move(srcs), offsets = std::move(offsets),
            widths = std::move(widths), m, total] {
      const float* g = io->grad_buf();
      for (size_t p = 0; p < srcs.size(); ++p) {
        if (!srcs[p]->requires_grad) continue;
        float* gp = srcs[p]->grad_buf();
        const int w = widths[p];
        for (int i = 0; i < m; ++i) {
          const float* gsrc = g + static_cast<int64_t>(i) * total + offsets[p];
          float* gdst = gp + static_cast<int64_t>(i) * w;
          for (int j = 0; j < w; ++j) gdst[j] += gsrc[j];
        }
      }
    });
  }
  return detail::wrap(impl);
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (a.rank() != 2) throw std::invalid_argument("slice_rows: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  if (r0 < 0 || r1 > m || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
  auto out = op_output({r1 - r0, n}, {&a});
  std::copy_n(a.data() + static_cast<int64_t>(r0) * n,
              static_cast<int64_t>(r1 - r0) * n, out.impl->data.data());
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, r0, n] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      const int64_t count = io->size();
      for (int64_t i = 0; i < count; ++i) ga[static_cast<int64_t>(r0) * n + i] += g[i];
    });
  }
  return out.tensor;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2) throw std::invalid_argument("slice_cols: expected rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  const int w = c1 - c0;
  auto out = op_output({m, w}, {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int i = 0; i < m; ++i) {
    std::copy_n(pa + static_cast<int64_t>(i) * n + c0, w, po + static_cast<int64_t>(i) * w);
  }
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, m, n, c0, w] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int i = 0; i < m; ++i) {
        const float* gsrc = g + static_cast<int64_t>(i) * w;
        float* gdst = ga + static_cast<int64_t>(i) * n + c0;
        for (int j = 0; j < w; ++j) gdst[j] += gsrc[j];
      }
    });
  }
  return out.tensor;
}

// ---- stochastic / relaxation -------------------------------------------------------

Tensor dropout(const Tensor& a, float p, RngStream& rng, bool train) {
  if (p < 0.0f || p >= 1.0f) throw std::invalid_argument("dropout: p must be in [0,1)");
  if (!train || p == 0.0f) {
    // identity in eval mode, but still a tracked node so gradients flow
    return scale(a, 1.0f);
  }
  auto out = op_output(a.shape(), {&a});
  const float keep = 1.0f - p;
  const float inv_keep = 1.0f / keep;
  std::vector<float> mask(static_cast<size_t>(a.size()));
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) {
    mask[i] = (rng.uniform() < static_cast<double>(keep)) ? inv_keep : 0.0f;
    po[i] = pa[i] * mask[i];
  }
  check_finite(out.impl, "dropout");
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, mask = std::move(mask)] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) ga[i] += g[i] * mask[i];
    });
  }
  return out.tensor;
}

Tensor ste_step(const Tensor& a, float tau) {
  if (!(tau > 0.0f)) throw std::invalid_argument("ste_step: tau must be positive");
  auto out = op_output(a.shape(), {&a});
  const float* pa = a.data();
  float* po = out.impl->data.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] > 0.0f ? 1.0f : 0.0f;
  if (out.track) {
    auto ia = a.impl(), io = out.impl;
    record([ia, io, tau] {
      const float* g = io->grad_buf();
      float* ga = ia->grad_buf();
      for (int64_t i = 0; i < ia->size(); ++i) {
        const float s = 1.0f / (1.0f + std::exp(-tau * ia->data[i]));
        ga[i] += g[i] * tau * s * (1.0f - s);
      }
    });
  }
  return out.tensor;
}

// ---- Adam ---------------------------------------------------------------------------

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<size_t>(params[i].size()), 0.0f);
      state.v[i].assign(static_cast<size_t>(params[i].size()), 0.0f);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter count changed");
  }
  state.step += 1;
  const float bc1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.step));
  const float bc2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (state.m[i].size() != static_cast<size_t>(p.size())) {
      throw std::invalid_argument("adam_step: shape mismatch with moment buffers");
    }
    const float* g = p.grad();
    float* d = p.data();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    for (int64_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * g[j] * g[j];
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      d[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

// ---- gradient checking -----------------------------------------------------------------

float grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 float h) {
  if (!(h > 0.0f) || h > 1e-2f) {
    throw std::invalid_argument("grad_check: h must be in (0, 1e-2]");
  }
  Tensor x0 = x.clone();
  x0.set_requires_grad(true);
  std::vector<float> ad;
  {
    Tape tape;
    Tensor loss = f(x0);
    if (loss.size() != 1) throw std::invalid_argument("grad_check: f must be scalar");
    tape.backward(loss);
    Tensor g = x0.grad_tensor();
    ad.assign(g.data(), g.data() + g.size());
  }
  float max_err = 0.0f;
  Tensor xp = x.detach();
  for (int64_t i = 0; i < x.size(); ++i) {
    const float orig = xp.data()[i];
    xp.data()[i] = orig + h;
    const double fp = f(xp).item();
    xp.data()[i] = orig - h;
    const double fm = f(xp).item();
    xp.data()[i] = orig;
    const double fd = (fp - fm) / (2.0 * static_cast<double>(h));
    const double err = std::fabs(ad[i] - fd) / (std::fabs(fd) + 1e-8);
    max_err = std::max(max_err, static_cast<float>(err));
  }
  return max_err;
}

}  // namespace gcav
