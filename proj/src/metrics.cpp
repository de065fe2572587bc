#include "mambareg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mambareg::metrics {

DiceConvention parse_dice_convention(const std::string& s) {
  if (s == "standard") return DiceConvention::Standard;
  if (s == "as-printed") return DiceConvention::AsPrinted;
  throw ConfigError("unknown dice convention '" + s + "' (expected standard|as-printed)");
}

std::string to_string(DiceConvention c) { return c == DiceConvention::Standard ? "standard" : "as-printed"; }

namespace {

torch::Tensor labels_2d(const torch::Tensor& t) {
  auto l = t.to(torch::kLong);
  while (l.dim() > 2 && l.size(0) == 1) l = l.squeeze(0);
  require_dim(l, 2, "weighted_dice");
  return l.contiguous();
}

torch::Tensor gray(const torch::Tensor& t) {
  auto g = t.to(torch::kDouble);
  if (g.dim() == 4) {
    if (g.size(0) != 1) throw ShapeError("image metric: batch of " + std::to_string(g.size(0)));
    g = g.squeeze(0);
  }
  if (g.dim() == 3) g = g.mean(0);
  require_dim(g, 2, "image metric");
  return g;
}

}  // namespace

double weighted_dice(const torch::Tensor& fixed, const torch::Tensor& warped, DiceConvention convention) {
  auto f = labels_2d(fixed);
  auto w = labels_2d(warped);
  require_same_shape(f, w, "weighted_dice");
  struct Counts {
    int64_t f = 0, w = 0, both = 0;
  };
  std::map<int64_t, Counts> counts;  // ascending ids
  const int64_t* fp = f.data_ptr<int64_t>();
  const int64_t* wp = w.data_ptr<int64_t>();
  int64_t total = 0;
  for (int64_t i = 0; i < f.numel(); ++i) {
    if (fp[i] > 0) {
      ++counts[fp[i]].f;
      ++total;
      if (wp[i] == fp[i]) ++counts[fp[i]].both;
    }
  }
  if (total == 0) throw UndefinedMetricError("weighted_dice: fixed labels have no foreground");
  for (int64_t i = 0; i < w.numel(); ++i) {
    if (wp[i] > 0) {
      auto it = counts.find(wp[i]);
      if (it != counts.end()) ++it->second.w;
    }
  }
  const double factor = convention == DiceConvention::Standard ? 2.0 : 1.0;
  double score = 0;
  for (const auto& [id, c] : counts) {
    const double dice = factor * static_cast<double>(c.both) / static_cast<double>(c.f + c.w);
    score += (static_cast<double>(c.f) / static_cast<double>(total)) * dice;
  }
  return score;
}

double mse(const torch::Tensor& a, const torch::Tensor& b) {
  auto ga = gray(a), gb = gray(b);
  require_same_shape(ga, gb, "mse");
  return (ga - gb).pow(2).mean().item<double>();
}

double ncc(const torch::Tensor& a, const torch::Tensor& b) {
  auto ga = gray(a), gb = gray(b);
  require_same_shape(ga, gb, "ncc");
  auto da = ga - ga.mean();
  auto db = gb - gb.mean();
  const double na = da.norm().item<double>(), nb = db.norm().item<double>();
  // rounding in the mean leaves a residue on constant images
  const double floor_a = 1e-12 * std::sqrt(double(ga.numel())) * std::max(1.0, ga.abs().max().item<double>());
  const double floor_b = 1e-12 * std::sqrt(double(gb.numel())) * std::max(1.0, gb.abs().max().item<double>());
  if (na <= floor_a || nb <= floor_b) throw UndefinedMetricError("ncc: constant image");
  return (da * db).sum().item<double>() / (na * nb);
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, int64_t window, double sigma, double data_range) {
  auto ga = gray(a), gb = gray(b);
  require_same_shape(ga, gb, "ssim");
  if (ga.size(0) < window || ga.size(1) < window) throw ShapeError("ssim: image smaller than window " + shape_string(ga));
  auto r = torch::arange(window, torch::kDouble) - (window - 1) / 2.0;
  auto g1 = torch::exp(-r.pow(2) / (2 * sigma * sigma));
  g1 = g1 / g1.sum();
  auto kernel = torch::outer(g1, g1).view({1, 1, window, window});
  auto filt = [&](const torch::Tensor& x) { return torch::conv2d(x.view({1, 1, x.size(0), x.size(1)}), kernel); };
  const double c1 = std::pow(0.01 * data_range, 2), c2 = std::pow(0.03 * data_range, 2);
  auto mu_a = filt(ga), mu_b = filt(gb);
  auto var_a = filt(ga * ga) - mu_a * mu_a;
  auto var_b = filt(gb * gb) - mu_b * mu_b;
  auto cov = filt(ga * gb) - mu_a * mu_b;
  auto map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
  return map.mean().item<double>();
}

bool MetricReport::has_nan() const { return std::isnan(dice) || std::isnan(mse) || std::isnan(ncc) || std::isnan(ssim); }

MetricReport image_report(const torch::Tensor& warped, const torch::Tensor& fixed, const torch::Tensor& warped_labels,
                          const torch::Tensor& fixed_labels, DiceConvention convention) {
  MetricReport r;
  r.dice = weighted_dice(fixed_labels, warped_labels, convention);
  r.mse = mse(warped, fixed);
  r.ncc = ncc(warped, fixed);
  r.ssim = ssim(warped, fixed);
  return r;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw PreconditionError("mean_report: no reports");
  MetricReport m;
  for (const auto& r : reports) {
    m.dice += r.dice;
    m.mse += r.mse;
    m.ncc += r.ncc;
    m.ssim += r.ssim;
  }
  const double n = static_cast<double>(reports.size());
  m.dice /= n;
  m.mse /= n;
  m.ncc /= n;
  m.ssim /= n;
  return m;
}

}  // namespace mambareg::metrics
