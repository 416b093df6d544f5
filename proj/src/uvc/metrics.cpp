#include "uvc/metrics.hpp"

#include <cmath>
#include <vector>

#include "uvc/error.hpp"

namespace uvc {

double psnr(const Image& a, const Image& b, double max_val) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw_data("psnr: image shapes differ");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

namespace {

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kSsimWindow);
  const double c = (kSsimWindow - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    double d = (i - c) / kSsimSigma;
    k[i] = std::exp(-0.5 * d * d);
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian filter, valid positions only: (H-10, W-10) per channel.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w) {
  static const std::vector<double> k = gaussian_kernel();
  const int vh = h - kSsimWindow + 1, vw = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<size_t>(h) * vw);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < vw; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * img[y * w + x + i];
      rows[static_cast<size_t>(y) * vw + x] = acc;
    }
  std::vector<double> out(static_cast<size_t>(vh) * vw);
  for (int y = 0; y < vh; ++y)
    for (int x = 0; x < vw; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) acc += k[i] * rows[(y + i) * vw + x];
      out[static_cast<size_t>(y) * vw + x] = acc;
    }
  return out;
}

}  // namespace

Image ssim_map(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw_data("ssim: image shapes differ");
  const int h = a.height, w = a.width;
  if (h < kSsimWindow || w < kSsimWindow)
    throw_data("ssim: image smaller than the 11x11 window");
  const int vh = h - kSsimWindow + 1, vw = w - kSsimWindow + 1;
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;

  Image map(vh, vw, 1);
  std::vector<double> xa(static_cast<size_t>(h) * w), xb(xa.size()), xaa(xa.size()),
      xbb(xa.size()), xab(xa.size());
  for (int ch = 0; ch < a.channels; ++ch) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double va = a.px(y, x, ch), vb = b.px(y, x, ch);
        size_t i = static_cast<size_t>(y) * w + x;
        xa[i] = va;
        xb[i] = vb;
        xaa[i] = va * va;
        xbb[i] = vb * vb;
        xab[i] = va * vb;
      }
    auto mu_a = filter_valid(xa, h, w);
    auto mu_b = filter_valid(xb, h, w);
    auto m_aa = filter_valid(xaa, h, w);
    auto m_bb = filter_valid(xbb, h, w);
    auto m_ab = filter_valid(xab, h, w);
    for (int y = 0; y < vh; ++y)
      for (int x = 0; x < vw; ++x) {
        size_t i = static_cast<size_t>(y) * vw + x;
        double ma = mu_a[i], mb = mu_b[i];
        double va = m_aa[i] - ma * ma;
        double vb = m_bb[i] - mb * mb;
        double cov = m_ab[i] - ma * mb;
        double s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        map.px(y, x, 0) += static_cast<float>(s / a.channels);
      }
  }
  return map;
}

double ssim(const Image& a, const Image& b) {
  Image map = ssim_map(a, b);
  double acc = 0.0;
  for (float v : map.data) acc += v;
  return acc / static_cast<double>(map.data.size());
}

double ssim_masked(const Image& a, const Image& b, const Image& region) {
  if (region.height != a.height || region.width != a.width)
    throw_data("ssim_masked: region size mismatch");
  Image map = ssim_map(a, b);
  const int off = kSsimWindow / 2;
  double acc = 0.0;
  size_t n = 0;
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x)
      if (region.px(y + off, x + off, 0) > 0.5f) {
        acc += map.px(y, x, 0);
        ++n;
      }
  return n == 0 ? 1.0 : acc / static_cast<double>(n);
}

}  // namespace uvc
