#include "mambareg/roi_mask.hpp"

#include <cmath>
#include <vector>

namespace mambareg::roi {

Polarity parse_polarity(const std::string& s) {
  if (s == "bright") return Polarity::Bright;
  if (s == "dark") return Polarity::Dark;
  throw ConfigError("unknown polarity '" + s + "' (expected bright|dark)");
}

std::string to_string(Polarity p) { return p == Polarity::Bright ? "bright" : "dark"; }

torch::Tensor to_gray(const torch::Tensor& img) {
  auto t = img.to(torch::kDouble);
  if (t.dim() == 4) {
    if (t.size(0) != 1) throw ShapeError("to_gray: batch of " + std::to_string(t.size(0)));
    t = t.squeeze(0);
  }
  if (t.dim() == 3) return t.mean(0);
  require_dim(t, 2, "to_gray");
  return t;
}

OtsuResult otsu(const torch::Tensor& gray, int bins, double lo, double hi) {
  if (bins < 2) throw ConfigError("otsu: need at least 2 bins");
  if (!(hi > lo)) throw ConfigError("otsu: empty intensity range");
  auto g = gray.to(torch::kDouble).contiguous();
  require_finite(g, "otsu");
  const double* v = g.data_ptr<double>();
  std::vector<double> hist(bins, 0.0);
  for (int64_t i = 0; i < g.numel(); ++i) {
    const int b = static_cast<int>(std::floor((v[i] - lo) / (hi - lo) * bins));
    hist[std::clamp(b, 0, bins - 1)] += 1;
  }
  int occupied = 0;
  for (double h : hist) occupied += h > 0;
  if (occupied < 2) throw PreconditionError("otsu: degenerate histogram (constant image)");

  const double total = static_cast<double>(g.numel());
  double best = -1.0;
  int best_k = 0;
  std::vector<double> score(bins - 1, -1.0);
  for (int k = 0; k < bins - 1; ++k) {
    double w0 = 0, w1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i < bins; ++i) {
      const double c = (i + 0.5) / bins;
      if (i <= k) {
        w0 += hist[i];
        s0 += hist[i] * c;
      } else {
        w1 += hist[i];
        s1 += hist[i] * c;
      }
    }
    if (w0 == 0 || w1 == 0) continue;
    const double m0 = s0 / w0, m1 = s1 / w1;
    const double between = (w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1);
    score[k] = between;
    if (between > best) {
      best = between;
      best_k = k;
    }
  }
  // Cuts inside a run of empty bins score identically; report the centre of that run.
  int last_k = best_k;
  while (last_k + 1 < bins - 1 && score[last_k + 1] == best) ++last_k;
  return {best_k, lo + (hi - lo) * (best_k + last_k + 2) / (2.0 * bins)};
}

double otsu_threshold(const torch::Tensor& gray, int bins) { return otsu(gray, bins).threshold; }

torch::Tensor binarize(const torch::Tensor& gray, double t, Polarity polarity) {
  auto g = gray.to(torch::kDouble);
  return (polarity == Polarity::Bright ? g > t : g <= t).to(torch::kUInt8);
}

torch::Tensor dilate(const torch::Tensor& mask, int64_t kh, int64_t kw) {
  require_dim(mask, 2, "dilate");
  if (kh < 1 || kw < 1) throw ConfigError("dilate: kernel must be at least 1x1");
  auto m = mask.to(torch::kUInt8).contiguous();
  const int64_t H = m.size(0), W = m.size(1);
  auto src = m.accessor<uint8_t, 2>();
  std::vector<uint8_t> rows(H * W, 0);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t d = 0; d < kw; ++d) {
        const int64_t sx = x + d - kw / 2;
        if (sx >= 0 && sx < W && src[y][sx]) {
          rows[y * W + x] = 1;
          break;
        }
      }
  auto out = torch::zeros({H, W}, torch::kUInt8);
  auto dst = out.accessor<uint8_t, 2>();
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int64_t d = 0; d < kh; ++d) {
        const int64_t sy = y + d - kh / 2;
        if (sy >= 0 && sy < H && rows[sy * W + x]) {
          dst[y][x] = 1;
          break;
        }
      }
  return out;
}

torch::Tensor filter_components(const torch::Tensor& mask, int64_t min_size) {
  require_dim(mask, 2, "filter_components");
  auto m = mask.to(torch::kUInt8).contiguous();
  const int64_t H = m.size(0), W = m.size(1);
  const uint8_t* src = m.data_ptr<uint8_t>();
  auto out = torch::zeros({H, W}, torch::kUInt8);
  uint8_t* dst = out.data_ptr<uint8_t>();
  std::vector<uint8_t> seen(H * W, 0);
  std::vector<int64_t> component, stack;
  for (int64_t s = 0; s < H * W; ++s) {
    if (!src[s] || seen[s]) continue;
    component.clear();
    stack.assign(1, s);
    seen[s] = 1;
    while (!stack.empty()) {
      const int64_t p = stack.back();
      stack.pop_back();
      component.push_back(p);
      const int64_t y = p / W, x = p % W;
      auto visit = [&](int64_t q) {
        if (src[q] && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - W);
      if (y + 1 < H) visit(p + W);
      if (x > 0) visit(p - 1);
      if (x + 1 < W) visit(p + 1);
    }
    if (static_cast<int64_t>(component.size()) >= min_size)
      for (int64_t p : component) dst[p] = 1;
  }
  return out;
}

int64_t MaskParams::min_size_for(int64_t H, int64_t W) const {
  return std::max<int64_t>(1, std::llround(static_cast<double>(min_size) * static_cast<double>(H * W) / 4096.0));
}

torch::Tensor gen_roi_mask(const torch::Tensor& img, const MaskParams& params) {
  auto gray = to_gray(img);
  auto m = binarize(gray, otsu(gray, params.bins).threshold, params.polarity);
  m = dilate(m, params.kernel_h, params.kernel_w);
  return filter_components(m, params.min_size_for(gray.size(0), gray.size(1)));
}

}  // namespace mambareg::roi
