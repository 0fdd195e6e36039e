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

#ifndef FSSL_COLOR_SPACE_HPP_
#define FSSL_COLOR_SPACE_HPP_

#include <torch/torch.h>

namespace fssl::color {

// Guard applied to every denominator (max - min, max, 1 - |2L - 1|).
inline constexpr double kDegeneracyEps = 1e-6;

// Channel tensors have the input's shape with the colour axis removed.
// Hue lives in [0, 1) and is 0 on the achromatic axis.
struct Hsv {
  torch::Tensor h, s, v;
};

struct Hsl {
  torch::Tensor h, s, l;
};

// Inputs are RGB images in [0, 1], shaped [3, H, W] or [N, 3, H, W].
// Both conversions are built from differentiable tensor ops; at achromatic
// pixels hue and saturation are pinned to 0 and receive zero gradient.
Hsv RgbToHsv(const torch::Tensor& rgb);
Hsl RgbToHsl(const torch::Tensor& rgb);

// Inverse hexcone transform; output has a colour axis of size 3 inserted
// at position h.dim() - 2.
torch::Tensor HsvToRgb(const torch::Tensor& h, const torch::Tensor& s,
                       const torch::Tensor& v);

// Smallest distance on the unit hue circle.
torch::Tensor CyclicHueDistance(const torch::Tensor& h1, const torch::Tensor& h2);

struct DisentangleTerms {
  torch::Tensor hue, saturation, value, lightness;
  torch::Tensor Total() const { return hue + saturation + value + lightness; }
};

// Sum over the H, S, V and L channels of the per-pixel mean squared channel
// difference. Hue differences are measured on the circle. This is a
// distance: the injector objective subtracts it.
DisentangleTerms DisentangleTermsOf(const torch::Tensor& poisoned,
                                    const torch::Tensor& augmented);
torch::Tensor DisentangleLoss(const torch::Tensor& poisoned,
                              const torch::Tensor& augmented);

// Luminance weights used by grayscale conversion (ITU-R BT.601).
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

torch::Tensor Luminance(const torch::Tensor& rgb);

}  // namespace fssl::color

#endif  // FSSL_COLOR_SPACE_HPP_
