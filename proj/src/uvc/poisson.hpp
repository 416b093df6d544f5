#pragma once

#include <cstdint>
#include <vector>

#include "uvc/image.hpp"

namespace uvc {

struct PoissonStats {
  int iterations = 0;
  double residual_inf = 0.0;
};

// Gradient-domain compositing: solves the discrete Poisson equation
// lap f = lap source inside the region (5-point Laplacian) with Dirichlet
// boundary f = target on the complement. Region pixels must not touch the
// image border. Solved per channel by conjugate gradients; the returned image
// equals target outside the region.
Image poisson_blend(const Image& source, const Image& target,
                    const std::vector<uint8_t>& region, PoissonStats* stats = nullptr);

// 4-neighbour erosion of a binary mask.
std::vector<uint8_t> erode4(const std::vector<uint8_t>& mask, int h, int w);

}  // namespace uvc
