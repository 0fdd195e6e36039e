/*
 * Copyright 2026 The fedssl-backdoor Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fssl/color_space.hpp"

#include "fssl/errors.hpp"

namespace fssl::color {
namespace {

struct Rgb {
  torch::Tensor r, g, b;
};

Rgb Split(const torch::Tensor& rgb) {
  Require(rgb.dim() == 3 || rgb.dim() == 4,
          "colour conversion expects [3,H,W] or [N,3,H,W]");
  const int64_t cdim = rgb.dim() - 3;
  Require(rgb.size(cdim) == 3, "colour conversion expects 3 channels");
  {
    torch::NoGradGuard no_grad;
    const double lo = rgb.min().item<double>();
    const double hi = rgb.max().item<double>();
    Require(lo >= -1e-6 && hi <= 1.0 + 1e-6,
            "colour conversion expects values in [0, 1]");
  }
  return {rgb.select(cdim, 0), rgb.select(cdim, 1), rgb.select(cdim, 2)};
}

torch::Tensor Hue(const Rgb& c, const torch::Tensor& maxc,
                  const torch::Tensor& delta) {
  const auto d = delta.clamp_min(kDegeneracyEps);
  const auto hr = (c.g - c.b) / d;
  const auto hg = (c.b - c.r) / d + 2.0;
  const auto hb = (c.r - c.g) / d + 4.0;
  const auto r_max = (c.r >= c.g).logical_and(c.r >= c.b);
  const auto g_max = r_max.logical_not().logical_and(c.g >= c.b);
  auto h = torch::where(r_max, hr, torch::where(g_max, hg, hb)) / 6.0;
  h = h - torch::floor(h.detach());
  return torch::where(delta > kDegeneracyEps, h, torch::zeros_like(h));
}

}  // namespace

Hsv RgbToHsv(const torch::Tensor& rgb) {
  const Rgb c = Split(rgb);
  const auto maxc = torch::maximum(c.r, torch::maximum(c.g, c.b));
  const auto minc = torch::minimum(c.r, torch::minimum(c.g, c.b));
  const auto delta = maxc - minc;
  auto s = torch::where(maxc > kDegeneracyEps,
                        delta / maxc.clamp_min(kDegeneracyEps),
                        torch::zeros_like(maxc));
  s = torch::where(delta > kDegeneracyEps, s, torch::zeros_like(s));
  return {Hue(c, maxc, delta), s, maxc};
}

Hsl RgbToHsl(const torch::Tensor& rgb) {
  const Rgb c = Split(rgb);
  const auto maxc = torch::maximum(c.r, torch::maximum(c.g, c.b));
  const auto minc = torch::minimum(c.r, torch::minimum(c.g, c.b));
  const auto delta = maxc - minc;
  const auto l = (maxc + minc) * 0.5;
  const auto denom = (1.0 - torch::abs(maxc + minc - 1.0)).clamp_min(kDegeneracyEps);
  auto s = torch::where(delta > kDegeneracyEps, delta / denom, torch::zeros_like(l));
  return {Hue(c, maxc, delta), s, l};
}

torch::Tensor HsvToRgb(const torch::Tensor& h, const torch::Tensor& s,
                       const torch::Tensor& v) {
  const auto h6 = (h - torch::floor(h)) * 6.0;
  const auto sector = torch::floor(h6).clamp(0, 5);
  const auto f = h6 - sector;
  const auto p = v * (1.0 - s);
  const auto q = v * (1.0 - s * f);
  const auto t = v * (1.0 - s * (1.0 - f));
  auto pick = [&](const torch::Tensor& a0, const torch::Tensor& a1,
                  const torch::Tensor& a2, const torch::Tensor& a3,
                  const torch::Tensor& a4, const torch::Tensor& a5) {
    return torch::where(sector == 0, a0,
           torch::where(sector == 1, a1,
           torch::where(sector == 2, a2,
           torch::where(sector == 3, a3,
           torch::where(sector == 4, a4, a5)))));
  };
  const auto r = pick(v, q, p, p, t, v);
  const auto g = pick(t, v, v, q, p, p);
  const auto b = pick(p, p, t, v, v, q);
  return torch::stack({r, g, b}, h.dim() - 2);
}

torch::Tensor CyclicHueDistance(const torch::Tensor& h1, const torch::Tensor& h2) {
  const auto d = torch::abs(h1 - h2);
  return torch::minimum(d, 1.0 - d);
}

DisentangleTerms DisentangleTermsOf(const torch::Tensor& poisoned,
                                    const torch::Tensor& augmented) {
  Require(poisoned.sizes().equals(augmented.sizes()),
          "DisentangleLoss: shape mismatch");
  const Hsv a = RgbToHsv(poisoned);
  const Hsv b = RgbToHsv(augmented);
  const Hsl al = RgbToHsl(poisoned);
  const Hsl bl = RgbToHsl(augmented);
  DisentangleTerms t;
  t.hue = CyclicHueDistance(a.h, b.h).square().mean();
  t.saturation = (a.s - b.s).square().mean();
  t.value = (a.v - b.v).square().mean();
  t.lightness = (al.l - bl.l).square().mean();
  return t;
}

torch::Tensor DisentangleLoss(const torch::Tensor& poisoned,
                              const torch::Tensor& augmented) {
  return DisentangleTermsOf(poisoned, augmented).Total();
}

torch::Tensor Luminance(const torch::Tensor& rgb) {
  const int64_t cdim = rgb.dim() - 3;
  return rgb.select(cdim, 0) * kLumaR + rgb.select(cdim, 1) * kLumaG +
         rgb.select(cdim, 2) * kLumaB;
}

}  // namespace fssl::color
