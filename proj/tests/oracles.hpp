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

// Test-only reference implementations. Everything here is written as the
// most literal possible evaluation of the defining formulas, independent of
// the library code paths it is used to check.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "emovoc/common.hpp"
#include "emovoc/tensor.hpp"

namespace oracles {

// Triple-loop matrix product at 64-bit.
inline std::vector<double> matmul(const std::vector<double>& x, const std::vector<double>& w,
                                  int rows, int inner, int cols) {
  std::vector<double> out(static_cast<std::size_t>(rows * cols), 0.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int k = 0; k < inner; ++k)
        out[static_cast<std::size_t>(r * cols + c)] +=
            x[static_cast<std::size_t>(r * inner + k)] * w[static_cast<std::size_t>(k * cols + c)];
  return out;
}

// Direct-loop cross-correlation at 64-bit; six explicit loops plus padding
// bound checks.
inline std::vector<double> conv2d(const std::vector<double>& x, int B, int C, int H, int W,
                                  const std::vector<double>& k, int F, int KH, int KW,
                                  int sh, int sw, int ph, int pw) {
  const int OH = (H + 2 * ph - KH) / sh + 1;
  const int OW = (W + 2 * pw - KW) / sw + 1;
  std::vector<double> out(static_cast<std::size_t>(B * F * OH * OW), 0.0);
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < KH; ++i)
              for (int j = 0; j < KW; ++j) {
                const int ih = oh * sh - ph + i;
                const int iw = ow * sw - pw + j;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x[static_cast<std::size_t>(((b * C + c) * H + ih) * W + iw)] *
                       k[static_cast<std::size_t>(((f * C + c) * KH + i) * KW + j)];
              }
          out[static_cast<std::size_t>(((b * F + f) * OH + oh) * OW + ow)] = acc;
        }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - mx);
  std::vector<double> out;
  out.reserve(x.size());
  for (double v : x) out.push_back(std::exp(v - mx) / sum);
  return out;
}

// Lin concordance with population (1/N) moments, straight from the formula.
inline double ccc(const std::vector<double>& p, const std::vector<double>& t) {
  const auto n = static_cast<double>(p.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mp += p[i];
    mt += t[i];
  }
  mp /= n;
  mt /= n;
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cov += (p[i] - mp) * (t[i] - mt);
    vp += (p[i] - mp) * (p[i] - mp);
    vt += (t[i] - mt) * (t[i] - mt);
  }
  cov /= n;
  vp /= n;
  vt /= n;
  const double denom = vp + vt + (mp - mt) * (mp - mt);
  if (denom == 0.0) return 1.0;
  return 2.0 * cov / denom;
}

inline double pearson(const std::vector<double>& p, const std::vector<double>& t) {
  const auto n = static_cast<double>(p.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mp += p[i];
    mt += t[i];
  }
  mp /= n;
  mt /= n;
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cov += (p[i] - mp) * (t[i] - mt);
    vp += (p[i] - mp) * (p[i] - mp);
    vt += (t[i] - mt) * (t[i] - mt);
  }
  if (vp == 0.0 || vt == 0.0) return 0.0;
  return cov / std::sqrt(vp * vt);
}

// Mean over batch of -log softmax(logits)[label], evaluated literally.
inline double cross_entropy(const std::vector<double>& logits, const std::vector<int>& labels, int K) {
  double total = 0.0;
  const int B = static_cast<int>(labels.size());
  for (int b = 0; b < B; ++b) {
    std::vector<double> row(logits.begin() + b * K, logits.begin() + (b + 1) * K);
    auto sm = softmax(row);
    total += -std::log(sm[static_cast<std::size_t>(labels[static_cast<std::size_t>(b)])]);
  }
  return total / B;
}

// O(N^2) DFT of one real frame.
inline std::vector<std::complex<double>> dft(const std::vector<double>& frame) {
  const auto N = frame.size();
  std::vector<std::complex<double>> out(N / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t n = 0; n < N; ++n) {
      const double ang = -2.0 * 3.14159265358979323846 * static_cast<double>(k) * static_cast<double>(n) /
                         static_cast<double>(N);
      acc += frame[n] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

// One-sample Kolmogorov-Smirnov statistic against U[0,1]. The asymptotic
// critical value at alpha = 0.01 is 1.628 / sqrt(n); D below it means p > 0.01.
inline double ks_uniform(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const auto n = samples.size();
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cdf = samples[i];
    d = std::max(d, std::abs(static_cast<double>(i + 1) / static_cast<double>(n) - cdf));
    d = std::max(d, std::abs(cdf - static_cast<double>(i) / static_cast<double>(n)));
  }
  return d;
}

inline emovoc::ad::Tensor random_tensor(const emovoc::ad::Shape& shape, emovoc::Rng& rng,
                                        double lo = -1.0, double hi = 1.0) {
  auto t = emovoc::ad::Tensor::zeros(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

}  // namespace oracles
