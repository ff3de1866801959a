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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "emovoc/common.hpp"

namespace emovoc::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major float32 value. Training values are 32-bit throughout; only
// reductions and test oracles use wider accumulators.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, float v);
  static Tensor of(const Shape& s, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(v_.size()); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }

  std::span<const float> data() const { return v_; }
  std::span<float> data() { return v_; }

  // Scalar extraction; contract error unless numel == 1.
  float scalar() const;

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> v_;
};

}  // namespace emovoc::ad
