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

#include <array>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "emovoc/tensor.hpp"

namespace emovoc::ad {

// Backward-pass multiplier of a gradient-reversal node. Shared by reference:
// the trainer retunes `multiplier` between epochs and every reversal node in
// the graph observes the new value on its next backward pass. The forward
// pass never reads it.
struct GrlSetting {
  float multiplier = 1.0f;
};

class Node;
using Var = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

// One vertex of the computation graph: the cached forward output plus the
// rule that scatters the output gradient to the inputs. Nodes carry a
// monotonically increasing creation id; since inputs always exist before the
// nodes that consume them, descending-id order is a reverse topological order
// and gives a deterministic gradient accumulation schedule.
class Node {
 public:
  Node(std::string kind, Tensor value, std::vector<Var> inputs, bool requires_grad, BackwardFn backward);

  const Tensor& value() const { return value_; }
  std::span<float> mutable_values() { return value_.data(); }  // leaf updates (optimizer)

  bool requires_grad() const { return requires_grad_; }
  bool has_grad() const { return !grad_.empty(); }
  std::span<const float> grad() const { return grad_; }

  // Accumulation target; allocates a zero buffer on first use. A node with
  // requires_grad == false never allocates one (callers must check).
  std::span<float> grad_buffer();
  void accum_grad(std::span<const float> g);
  void zero_grad() { grad_.clear(); }

  std::size_t num_inputs() const { return inputs_.size(); }
  const Var& input(std::size_t i) const { return inputs_[i]; }

  std::int64_t id() const { return id_; }
  const std::string& kind() const { return kind_; }
  std::string ident() const { return "#" + std::to_string(id_) + " (" + kind_ + ")"; }

  // Scalar reductions keep their 64-bit accumulator alongside the float32
  // output; grad_check probes read it to avoid cancellation noise.
  void set_precise_scalar(double v) { precise_ = v; }
  double precise_scalar() const;

 private:
  friend void backward(const Var&);

  std::string kind_;
  Tensor value_;
  std::vector<float> grad_;  // empty until first accumulation
  bool requires_grad_ = false;
  std::vector<Var> inputs_;
  BackwardFn backward_;
  std::int64_t id_ = 0;
  double precise_ = std::numeric_limits<double>::quiet_NaN();
  bool has_precise_ = false;
};

// Graph construction -------------------------------------------------------

Var leaf(Tensor t, bool requires_grad = false);
Var constant(Tensor t);

// Escape hatch for modules that define their own differentiable operations
// (the loss functions live outside this file). requires_grad is inferred
// from the inputs.
Var make_op(std::string kind, Tensor out, std::vector<Var> inputs, BackwardFn backward);

// Primitives ---------------------------------------------------------------

Var add(const Var& a, const Var& b);             // same shape
Var mul(const Var& a, const Var& b);             // same shape, elementwise
Var scale(const Var& x, float c);                // scalar times tensor
Var bias_add(const Var& x, const Var& b);        // [B,O] + [O]
Var row_scale(const Var& x, const Var& a);       // [B,D] gated by [1,D] row
Var matmul(const Var& x, const Var& w);          // [B,I] . [I,O]
Var linear(const Var& x, const Var& w, const Var& b);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softmax(const Var& x, int axis);
Var grad_reversal(const Var& x, std::shared_ptr<GrlSetting> setting);
Var conv2d(const Var& x, const Var& k, std::array<int, 2> stride, std::array<int, 2> pad);
Var avg_pool2(const Var& x);                     // 2x2 window, stride 2
Var global_avg_pool(const Var& x);               // [B,C,H,W] -> [B,C]
Var global_max_pool(const Var& x);               // [B,C,H,W] -> [B,C]
Var concat_rows(const std::vector<Var>& xs);     // along axis 0
Var pair_mean_rows(const Var& x);                // [2B,D] -> [B,D], rows (2i,2i+1) averaged
Var reduce_sum(const Var& x);                    // -> [1]
Var reduce_mean(const Var& x);                   // -> [1]

// Backward -----------------------------------------------------------------

// Reverse accumulation from a scalar loss. Gradients add up across fan-out;
// repeated calls keep accumulating until zero_grad.
void backward(const Var& loss);

// Scans every node reachable from root and throws NumericError naming the
// offending node if any forward value is non-finite.
void check_finite(const Var& root);

// Finite-difference verification. Builds the graph twice per parameter
// element (central differences, 64-bit arithmetic on the 32-bit losses) and
// returns max over elements of |analytic - cd| / max(|analytic|, |cd|, 1e-8).
// The builder must be a pure function of the leaves it is given.
using GraphBuilder = std::function<Var(const std::vector<Var>&)>;
double grad_check(const GraphBuilder& build, const std::vector<Tensor>& points, double eps);

}  // namespace emovoc::ad
