// Copyright (c) 2026 emovoc Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "emovoc/tensor.hpp"

#include <cmath>

namespace emovoc::ad {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) {
    if (e <= 0) throw DimError("shape extents must be positive, got " + shape_str(s));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

Tensor Tensor::zeros(const Shape& s) {
  Tensor t;
  t.shape_ = s;
  t.v_.assign(static_cast<std::size_t>(shape_numel(s)), 0.0f);
  return t;
}

Tensor Tensor::full(const Shape& s, float v) {
  Tensor t = zeros(s);
  for (auto& x : t.v_) x = v;
  return t;
}

Tensor Tensor::of(const Shape& s, std::vector<float> values) {
  if (shape_numel(s) != static_cast<std::int64_t>(values.size())) {
    throw DimError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(s));
  }
  Tensor t;
  t.shape_ = s;
  t.v_ = std::move(values);
  return t;
}

float Tensor::scalar() const {
  if (numel() != 1) throw ContractError("scalar() on tensor of shape " + shape_str(shape_));
  return v_[0];
}

bool Tensor::all_finite() const {
  for (float x : v_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace emovoc::ad
