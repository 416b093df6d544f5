#pragma once

#include "uvc/image.hpp"

namespace uvc {

// Peak signal-to-noise ratio in dB; identical images report the 100 dB cap so
// aggregates stay finite.
double psnr(const Image& a, const Image& b, double max_val = 1.0);
constexpr double kPsnrCap = 100.0;

// Mean structural similarity over valid 11x11 Gaussian windows (sigma 1.5,
// K1 = 0.01, K2 = 0.03, dynamic range 1), channels averaged.
double ssim(const Image& a, const Image& b);

// Per-position SSIM over valid window centers: (H-10, W-10, 1). Position
// (y, x) corresponds to the window centered at (y+5, x+5) in the inputs.
Image ssim_map(const Image& a, const Image& b);

// Mean of the SSIM map over positions whose window center lies in the region
// (single-channel mask, same size as the inputs). Returns 1.0 when the region
// contains no valid window center.
double ssim_masked(const Image& a, const Image& b, const Image& region);

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;

}  // namespace uvc
