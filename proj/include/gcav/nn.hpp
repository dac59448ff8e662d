#pragma once

#include <vector>

#include "gcav/tensor.hpp"

namespace gcav {

// Fully connected layer, weights [in×out], bias [out].
struct Linear {
  Tensor W;
  Tensor b;

  Linear() = default;
  // Gaussian init with stddev sqrt(gain/in); gain 1 = Xavier, 2 = He.
  Linear(int in, int out, RngStream& rng, float gain = 1.0f);

  Tensor operator()(const Tensor& x) const;  // [m×in] -> [m×out]
  std::vector<Tensor> params();
  void set_requires_grad(bool value);
};

// -mean(log p[label]) over rows; labels index columns of logits.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// argmax match fraction (ties resolve to the lower index)
float accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace gcav
