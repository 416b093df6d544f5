#include "uvc/poisson.hpp"

#include <cmath>

#include "uvc/error.hpp"

namespace uvc {

std::vector<uint8_t> erode4(const std::vector<uint8_t>& mask, int h, int w) {
  std::vector<uint8_t> out(mask.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask[y * w + x]) continue;
      bool keep = y > 0 && y < h - 1 && x > 0 && x < w - 1 && mask[(y - 1) * w + x] &&
                  mask[(y + 1) * w + x] && mask[y * w + x - 1] && mask[y * w + x + 1];
      out[y * w + x] = keep ? 1 : 0;
    }
  return out;
}

Image poisson_blend(const Image& source, const Image& target,
                    const std::vector<uint8_t>& region, PoissonStats* stats) {
  const int h = target.height, w = target.width, ch = target.channels;
  if (source.height != h || source.width != w || source.channels != ch)
    throw_data("poisson_blend: source/target size mismatch");
  if (region.size() != static_cast<size_t>(h) * w)
    throw_data("poisson_blend: region mask size mismatch");

  std::vector<int> index(static_cast<size_t>(h) * w, -1);
  int n = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (region[y * w + x]) {
        if (y == 0 || y == h - 1 || x == 0 || x == w - 1)
          throw_data("poisson_blend: region touches the image border at (" +
                     std::to_string(y) + "," + std::to_string(x) + ")");
        index[y * w + x] = n++;
      }

  Image out = target;
  if (n == 0) return out;

  const int dy[4] = {-1, 1, 0, 0};
  const int dx[4] = {0, 0, -1, 1};

  // coordinates of the unknowns for matvec
  std::vector<int> ys(n), xs(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (index[y * w + x] >= 0) {
        ys[index[y * w + x]] = y;
        xs[index[y * w + x]] = x;
      }

  auto matvec = [&](const std::vector<double>& v, std::vector<double>& out_v) {
    for (int i = 0; i < n; ++i) {
      double acc = 4.0 * v[i];
      for (int k = 0; k < 4; ++k) {
        int qy = ys[i] + dy[k], qx = xs[i] + dx[k];
        int qi = index[qy * w + qx];
        if (qi >= 0) acc -= v[qi];
      }
      out_v[i] = acc;
    }
  };

  const int max_iter = 10 * n;
  int total_iters = 0;
  double worst_residual = 0.0;

  for (int c = 0; c < ch; ++c) {
    std::vector<double> b(n), f(n), r(n), p(n), ap(n);
    for (int i = 0; i < n; ++i) {
      double sp = source.px(ys[i], xs[i], c);
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) {
        int qy = ys[i] + dy[k], qx = xs[i] + dx[k];
        acc += sp - source.px(qy, qx, c);
        if (index[qy * w + qx] < 0) acc += target.px(qy, qx, c);
      }
      b[i] = acc;
      f[i] = target.px(ys[i], xs[i], c);  // warm start from the boundary image
    }

    matvec(f, ap);
    double rr = 0.0;
    for (int i = 0; i < n; ++i) {
      r[i] = b[i] - ap[i];
      p[i] = r[i];
      rr += r[i] * r[i];
    }
    int it = 0;
    const double tol = 1e-8;
    while (it < max_iter) {
      double rinf = 0.0;
      for (int i = 0; i < n; ++i) rinf = std::max(rinf, std::abs(r[i]));
      if (rinf < tol) break;
      matvec(p, ap);
      double pap = 0.0;
      for (int i = 0; i < n; ++i) pap += p[i] * ap[i];
      if (pap <= 0.0) throw_data("poisson_blend: system is singular");
      double alpha = rr / pap;
      double rr_new = 0.0;
      for (int i = 0; i < n; ++i) {
        f[i] += alpha * p[i];
        r[i] -= alpha * ap[i];
        rr_new += r[i] * r[i];
      }
      double beta = rr_new / rr;
      rr = rr_new;
      for (int i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
      ++it;
    }
    total_iters += it;

    // verify A f = b directly
    matvec(f, ap);
    double rinf = 0.0;
    for (int i = 0; i < n; ++i) rinf = std::max(rinf, std::abs(ap[i] - b[i]));
    worst_residual = std::max(worst_residual, rinf);
    if (rinf >= 1e-6)
      throw_data("poisson_blend: solver did not reach residual 1e-6 (got " +
                 std::to_string(rinf) + ")");

    for (int i = 0; i < n; ++i)
      out.px(ys[i], xs[i], c) = static_cast<float>(f[i]);
  }

  if (stats) {
    stats->iterations = total_iters;
    stats->residual_inf = worst_residual;
  }
  return out;
}

}  // namespace uvc
