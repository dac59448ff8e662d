#include "gcav/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace gcav {

Linear::Linear(int in, int out, RngStream& rng, float gain) {
  const float stddev = std::sqrt(gain / static_cast<float>(in));
  W = Tensor::randn({in, out}, rng, stddev);
  b = Tensor::zeros({out});
  W.set_requires_grad(true);
  b.set_requires_grad(true);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor in = x.rank() == 1 ? reshape(x, {1, x.dim(0)}) : x;
  return add_rowwise(matmul(in, W), b);
}

std::vector<Tensor> Linear::params() { return {W, b}; }

void Linear::set_requires_grad(bool value) {
  W.set_requires_grad(value);
  b.set_requires_grad(value);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const int m = logits.rows(), k = logits.cols();
  if (static_cast<int>(labels.size()) != m) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  Tensor mask = Tensor::zeros({m, k});
  for (int i = 0; i < m; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= k) throw std::invalid_argument("cross_entropy: label out of range");
    mask.data()[static_cast<int64_t>(i) * k + y] = 1.0f;
  }
  Tensor picked = sum_all(mul(log_softmax_rows(logits), mask));
  return scale(picked, -1.0f / static_cast<float>(m));
}

float accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const int m = logits.rows(), k = logits.cols();
  if (static_cast<int>(labels.size()) != m) {
    throw std::invalid_argument("accuracy: label count mismatch");
  }
  int hits = 0;
  for (int i = 0; i < m; ++i) {
    const float* row = logits.data() + static_cast<int64_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<float>(hits) / static_cast<float>(m);
}

}  // namespace gcav
