#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gcav/rng.hpp"

namespace gcav {

using Shape = std::vector<int>;

class Tensor;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated on demand when requires_grad
  bool requires_grad = false;

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  float* grad_buf();  // ensures allocation, zero-filled
};

Tensor wrap(std::shared_ptr<TensorImpl> impl);
}  // namespace detail

// Dense row-major float32 tensor. Copies are shallow (shared payload);
// clone() deep-copies. All op outputs are checked finite; NaN/Inf is a hard
// error at the op boundary.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, float value);
  static Tensor from(const Shape& shape, std::vector<float> values);
  static Tensor scalar(float value);
  static Tensor randn(const Shape& shape, RngStream& rng, float stddev = 1.0f);
  static Tensor runif(const Shape& shape, RngStream& rng, float lo, float hi);
  static Tensor identity(int n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int dim(int i) const;
  int64_t size() const;
  int rows() const;  // rank 1: 1, rank 2: dim(0)
  int cols() const;  // rank 1: dim(0), rank 2: dim(1)

  float* data();
  const float* data() const;
  float at(int i) const;
  float at(int i, int j) const;
  float item() const;  // requires size()==1

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  float* grad();              // allocates zeros on demand
  const float* grad() const;  // nullptr if never touched
  Tensor grad_tensor() const; // copy of grad (zeros if never touched)
  void zero_grad();

  Tensor clone() const;   // deep copy, keeps requires_grad, drops grad
  Tensor detach() const;  // deep copy with requires_grad=false

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor detail::wrap(std::shared_ptr<detail::TensorImpl>);
};

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread (nesting is LIFO); primitives executed while a tape is
// active record their backward rule onto it when any input requires grad.
// backward() replays the recorded ops once, in reverse execution order.
// Gradients accumulate across repeated backward() calls until zero_grad().
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_fn);
  void note_output(const std::shared_ptr<detail::TensorImpl>& impl);
  void backward(const Tensor& loss);
  size_t num_ops() const { return ops_.size(); }

 private:
  std::vector<std::function<void()>> ops_;
  std::vector<std::shared_ptr<detail::TensorImpl>> outputs_;
  Tape* prev_ = nullptr;
};

// ---- primitives -----------------------------------------------------------
// Elementwise ops require identical shapes. 1-D tensors are treated as a
// single row by the row-wise ops.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);       // [m×k]·[k×n]
Tensor transpose(const Tensor& a);                     // [m×n] -> [n×m]
Tensor reshape(const Tensor& a, const Shape& shape);   // same size
Tensor add_rowwise(const Tensor& a, const Tensor& b);  // [m×n] + [n]

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp_elem(const Tensor& a);

Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, float eps = 1e-5f);  // over last axis

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_axis0(const Tensor& a);      // [m×n] -> [n]
Tensor variance_all(const Tensor& a);    // population, flattened
Tensor variance_rows(const Tensor& a);   // [m×n] -> [m], population per row

Tensor dot(const Tensor& a, const Tensor& b);                // flattened
Tensor cosine_similarity(const Tensor& a, const Tensor& b);  // flattened, eps 1e-12
Tensor cosine_rows(const Tensor& a, const Tensor& b);        // [m×n]×[m×n] -> [m]
Tensor l2_normalize(const Tensor& a);        // flattened direction, eps 1e-12
Tensor l2_normalize_rows(const Tensor& a);   // per-row

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);

// identity in eval mode; inverted scaling with the stream's Bernoulli mask
// in train mode
Tensor dropout(const Tensor& a, float p, RngStream& rng, bool train);

// Straight-through step: forward is the hard indicator [x > 0] (ties count
// as 0), backward is the gradient of sigmoid(tau*x).
Tensor ste_step(const Tensor& a, float tau);

// ---- optimizer -------------------------------------------------------------

struct AdamState {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  long step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

// Standard bias-corrected Adam over the params' grad buffers.
void adam_step(std::span<Tensor> params, AdamState& state);
void zero_grads(std::span<Tensor> params);

// ---- gradient checking ------------------------------------------------------

// Max over coordinates of |autodiff - central FD| / (|FD| + 1e-8).
// h must be in (0, 1e-2]. f must map a tensor shaped like x to a scalar.
float grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                 float h);

}  // namespace gcav
