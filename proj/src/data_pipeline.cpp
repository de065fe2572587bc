#include "mambareg/data_pipeline.hpp"

#include "mambareg/log.hpp"
#include "mambareg/registration.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace mambareg::data {

namespace {

bool is_lossy(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".jpg" || ext == ".jpeg" || ext == ".webp";
}

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> exts = {".png", ".tif", ".tiff", ".bmp", ".jpg", ".jpeg", ".webp"};
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return exts.count(ext) > 0 && p.stem().extension() != ".mask";
}

cv::Mat imread_checked(const fs::path& path) {
  if (!fs::exists(path)) throw PreconditionError("missing file " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw PreconditionError("cannot decode " + path.string());
  return m;
}

void imwrite_checked(const fs::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw PreconditionError("cannot write " + path.string());
}

/// [C, H, W] float tensor -> HxW(xC) CV_32F Mat (RGB order kept).
cv::Mat to_mat(const torch::Tensor& chw) {
  auto t = chw.detach().to(torch::kFloat).permute({1, 2, 0}).contiguous();
  const int C = static_cast<int>(t.size(2));
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32FC(C));
  std::memcpy(m.data, t.data_ptr<float>(), t.numel() * sizeof(float));
  return m;
}

torch::Tensor from_mat(const cv::Mat& m) {
  cv::Mat f;
  m.convertTo(f, CV_32F);
  if (!f.isContinuous()) f = f.clone();
  auto t = torch::from_blob(f.data, {f.rows, f.cols, f.channels()}, torch::kFloat).clone();
  return t.permute({2, 0, 1}).contiguous();
}

cv::Mat resize_to(const cv::Mat& m, int64_t size, int interp) {
  cv::Mat out;
  cv::resize(m, out, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, interp);
  return out;
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  std::vector<fs::path> frames;
  if (!fs::is_directory(dir)) return frames;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) frames.push_back(e.path());
  std::sort(frames.begin(), frames.end(), [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
  return frames;
}

std::vector<fs::path> list_dirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

int64_t instance_count(const fs::path& label_path) {
  auto l = read_labels(label_path);
  auto u = std::get<0>(torch::_unique(l.flatten()));
  return (u > 0).sum().item<int64_t>();
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double uniform(torch::Generator& gen, double lo, double hi) {
  return lo + (hi - lo) * torch::rand({1}, gen, torch::kDouble).item<double>();
}

std::string relative_to(const fs::path& p, const fs::path& base) { return fs::relative(p, base).generic_string(); }

}  // namespace

// ---- raster I/O -------------------------------------------------------------

torch::Tensor read_image(const fs::path& path) {
  if (is_lossy(path)) log::warn("lossy image format: " + path.string());
  cv::Mat m = imread_checked(path);
  const double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : m.depth() == CV_8U ? 1.0 / 255.0 : 1.0;
  if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
  if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
  return (from_mat(m) * scale).clamp(0, 1);
}

void write_image(const fs::path& path, const torch::Tensor& img) {
  auto t = img.dim() == 2 ? img.unsqueeze(0) : img;
  require_dim(t, 3, "write_image");
  cv::Mat m = to_mat(t.clamp(0, 1) * 255.0);
  cv::Mat u8;
  m.convertTo(u8, CV_8U);  // saturating round-to-nearest
  if (u8.channels() == 3) cv::cvtColor(u8, u8, cv::COLOR_RGB2BGR);
  imwrite_checked(path, u8);
}

torch::Tensor read_labels(const fs::path& path) {
  cv::Mat m = imread_checked(path);
  if (m.channels() > 1) cv::extractChannel(m, m, 0);
  return from_mat(m)[0].to(torch::kLong);
}

void write_labels(const fs::path& path, const torch::Tensor& labels) {
  require_dim(labels, 2, "write_labels");
  if (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() > 65535)
    throw PreconditionError("write_labels: ids must fit 16 bits");
  auto t = labels.to(torch::kInt).contiguous();
  cv::Mat m32(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32S, t.data_ptr<int>());
  cv::Mat m16;
  m32.convertTo(m16, CV_16U);
  imwrite_checked(path, m16);
}

torch::Tensor read_mask(const fs::path& path) {
  cv::Mat m = imread_checked(path);
  if (m.channels() > 1) cv::extractChannel(m, m, 0);
  return (from_mat(m)[0] > 127).to(torch::kUInt8);
}

void write_mask(const fs::path& path, const torch::Tensor& mask) {
  require_dim(mask, 2, "write_mask");
  auto t = (mask.to(torch::kUInt8) > 0).to(torch::kUInt8).mul(255).contiguous();
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8U, t.data_ptr<uint8_t>());
  imwrite_checked(path, m.clone());
}

torch::Tensor to_channels(const torch::Tensor& img, int64_t channels) {
  const int64_t cdim = img.dim() - 3;
  const int64_t have = img.size(cdim);
  if (have == channels) return img;
  if (channels == 1) return img.mean(cdim, true);
  if (have == 1) {
    std::vector<int64_t> reps(img.dim(), 1);
    reps[cdim] = channels;
    return img.repeat(reps);
  }
  throw ShapeError("cannot convert " + std::to_string(have) + " channels to " + std::to_string(channels));
}

// ---- synthetic pairs --------------------------------------------------------

void SynthParams::validate() const {
  if (size < 8) throw ConfigError("synth: size must be at least 8");
  if (min_instances < 1 || max_instances < min_instances) throw ConfigError("synth: bad instance range");
  if (max_displacement < 0) throw ConfigError("synth: max_displacement must be >= 0");
  if (smoothing <= 0) throw ConfigError("synth: smoothing must be > 0");
  if (gamma <= 0) throw ConfigError("synth: gamma must be > 0");
  if (noise < 0) throw ConfigError("synth: noise must be >= 0");
  if (channels != 1 && channels != 3) throw ConfigError("synth: channels must be 1 or 3");
}

torch::Tensor random_smooth_field(int64_t H, int64_t W, double max_displacement, double smoothing,
                                  torch::Generator& gen) {
  // coarse control grid, one node per `smoothing` pixels, bicubic upsampled
  auto nodes = [&](int64_t n) { return std::max<int64_t>(2, std::llround(static_cast<double>(n - 1) / smoothing) + 1); };
  auto coarse = torch::randn({1, 2, nodes(H), nodes(W)}, gen, torch::kDouble);
  const double target = max_displacement * uniform(gen, 0.5, 1.0);
  if (max_displacement == 0) return torch::zeros({2, H, W}, torch::kDouble);
  namespace F = torch::nn::functional;
  auto field = F::interpolate(coarse, F::InterpolateFuncOptions()
                                          .size(std::vector<int64_t>{H, W})
                                          .mode(torch::kBicubic)
                                          .align_corners(true))[0];
  const double peak = field.pow(2).sum(0).sqrt().max().item<double>();
  if (peak == 0) return torch::zeros({2, H, W}, torch::kDouble);
  return field * (target / peak);
}

SynthPair synth_pair(const SynthParams& p, uint64_t seed) {
  p.validate();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  const int64_t S = p.size;
  const double s = static_cast<double>(S);
  auto yy = torch::arange(S, torch::kDouble).view({S, 1}).expand({S, S});
  auto xx = torch::arange(S, torch::kDouble).view({1, S}).expand({S, S});

  const double cy = s / 2 + uniform(gen, -0.05, 0.05) * s;
  const double cx = s / 2 + uniform(gen, -0.05, 0.05) * s;
  const int64_t K = p.min_instances + static_cast<int64_t>(std::floor(
                                          uniform(gen, 0, 1) * static_cast<double>(p.max_instances - p.min_instances + 1)));
  const double base_angle = uniform(gen, 0, 2 * std::numbers::pi);

  auto labels = torch::zeros({S, S}, torch::kLong);
  auto value = torch::full({S, S}, 0.08, torch::kDouble);  // shared content
  auto texture = torch::zeros({S, S}, torch::kDouble);     // modality-A only
  for (int64_t k = 0; k < std::min<int64_t>(K, p.max_instances); ++k) {
    const double angle = base_angle + 2 * std::numbers::pi * k / K + uniform(gen, -0.3, 0.3) * std::numbers::pi / K;
    const double a = s * uniform(gen, 0.16, 0.24);
    const double b = s * uniform(gen, 0.06, 0.09);
    const double ly = cy + 0.85 * a * std::sin(angle);
    const double lx = cx + 0.85 * a * std::cos(angle);
    auto u = (xx - lx) * std::cos(angle) + (yy - ly) * std::sin(angle);
    auto v = -(xx - lx) * std::sin(angle) + (yy - ly) * std::cos(angle);
    auto inside = (u / a).pow(2) + (v / b).pow(2) <= 1.0;
    labels.masked_fill_(inside, k + 1);
    value = torch::where(inside, torch::full_like(value, uniform(gen, 0.55, 0.85)), value);
    texture = torch::where(inside, 0.12 * torch::cos(u * (3 * std::numbers::pi / a)) - 0.06 * (v / b).abs(), texture);
  }

  auto phi = random_smooth_field(S, S, p.max_displacement, p.smoothing, gen);
  auto moving = (value * (1 + texture)).clamp(0, 1);
  auto carried = reg::stn_warp(value.view({1, 1, S, S}), phi.unsqueeze(0))[0][0];
  auto noise = torch::randn({S, S}, gen, torch::kDouble) * p.noise;
  auto fixed = (carried.pow(p.gamma) + noise).clamp(0, 1);

  SynthPair out;
  out.moving_labels = labels;
  out.fixed_labels = reg::warp_labels(labels, phi.unsqueeze(0));
  out.phi = phi.to(torch::kFloat);
  auto shape = [&](const torch::Tensor& t) { return to_channels(t.to(torch::kFloat).unsqueeze(0), p.channels); };
  out.moving = shape(moving);
  out.fixed = shape(fixed);
  if (p.channels == 3) {
    // hue tint for modality A
    out.moving = (out.moving * torch::tensor({0.8, 1.0, 0.6}, torch::kFloat).view({3, 1, 1})).clamp(0, 1);
  }
  return out;
}

uint64_t pair_seed(uint64_t seed, uint64_t index) { return splitmix64(seed ^ splitmix64(index + 1)); }

// ---- manifest --------------------------------------------------------------

void write_manifest(const fs::path& path, const std::vector<PairRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path base = fs::absolute(path).parent_path();
  std::ofstream out(path);
  if (!out) throw PreconditionError("cannot write manifest " + path.string());
  out << kManifestHeader << '\n'
      << "moving_path\tfixed_path\tmoving_label_path\tfixed_label_path\tmoving_mask_path\tfixed_mask_path\tplant_id\t"
         "t_moving\tt_fixed\n";
  auto rel = [&](const fs::path& p) { return relative_to(fs::absolute(p), base); };
  auto opt = [&](const std::optional<fs::path>& p) { return p ? rel(*p) : std::string(); };
  for (const auto& r : records) {
    out << rel(r.moving_path) << '\t' << rel(r.fixed_path) << '\t' << opt(r.moving_label_path) << '\t'
        << opt(r.fixed_label_path) << '\t' << rel(r.moving_mask_path) << '\t' << rel(r.fixed_mask_path) << '\t'
        << r.plant_id << '\t' << r.t_moving << '\t' << r.t_fixed << '\n';
  }
}

std::vector<PairRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot read manifest " + path.string());
  const fs::path base = fs::absolute(path).parent_path();
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw ConfigError("manifest " + path.string() + ": expected header " + kManifestHeader);
  std::getline(in, line);  // column names
  std::vector<PairRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (!line.empty() && line.back() == '\t') f.emplace_back();
    if (f.size() != 9) throw ConfigError("manifest " + path.string() + ": expected 9 fields, got " + std::to_string(f.size()));
    auto abs = [&](const std::string& s) { return (base / s).lexically_normal(); };
    PairRecord r;
    r.moving_path = abs(f[0]);
    r.fixed_path = abs(f[1]);
    if (!f[2].empty()) r.moving_label_path = abs(f[2]);
    if (!f[3].empty()) r.fixed_label_path = abs(f[3]);
    r.moving_mask_path = abs(f[4]);
    r.fixed_mask_path = abs(f[5]);
    r.plant_id = f[6];
    r.t_moving = f[7];
    r.t_fixed = f[8];
    records.push_back(std::move(r));
  }
  return records;
}

// ---- dataset tooling -------------------------------------------------------

fs::path mask_path_for(const fs::path& image_path) {
  return image_path.parent_path() / "masks" / (image_path.stem().string() + ".mask.png");
}

fs::path label_path_for(const fs::path& image_path) {
  return image_path.parent_path() / "labels" / (image_path.stem().string() + ".png");
}

Box label_box(const torch::Tensor& labels, double margin) {
  require_dim(labels, 2, "label_box");
  auto nz = torch::nonzero(labels);
  if (nz.size(0) == 0) throw PreconditionError("label_box: no labeled pixels");
  const int64_t y_min = nz.select(1, 0).min().item<int64_t>(), y_max = nz.select(1, 0).max().item<int64_t>();
  const int64_t x_min = nz.select(1, 1).min().item<int64_t>(), x_max = nz.select(1, 1).max().item<int64_t>();
  Box b{y_min, x_min, y_max - y_min + 1, x_max - x_min + 1};
  const int64_t gy = std::llround(margin * static_cast<double>(b.h));
  const int64_t gx = std::llround(margin * static_cast<double>(b.w));
  b.y0 -= gy;
  b.h += 2 * gy;
  b.x0 -= gx;
  b.w += 2 * gx;
  const int64_t side = std::max(b.h, b.w);
  b.y0 -= (side - b.h) / 2;
  b.x0 -= (side - b.w) / 2;
  b.h = b.w = side;
  return b;
}

torch::Tensor crop(const torch::Tensor& img, const Box& box) {
  if (img.dim() == 2) return crop(img.unsqueeze(0), box)[0];
  require_dim(img, 3, "crop");
  const int64_t H = img.size(1), W = img.size(2);
  auto out = torch::zeros({img.size(0), box.h, box.w}, img.options());
  const int64_t sy0 = std::max<int64_t>(box.y0, 0), sy1 = std::min(box.y0 + box.h, H);
  const int64_t sx0 = std::max<int64_t>(box.x0, 0), sx1 = std::min(box.x0 + box.w, W);
  if (sy0 < sy1 && sx0 < sx1) {
    out.slice(1, sy0 - box.y0, sy1 - box.y0)
        .slice(2, sx0 - box.x0, sx1 - box.x0)
        .copy_(img.slice(1, sy0, sy1).slice(2, sx0, sx1));
  }
  return out;
}

std::vector<CropOutcome> crop_by_latest_labels(const fs::path& plant_dir, const fs::path& out_plant_dir,
                                               const CropParams& params) {
  std::vector<CropOutcome> outcomes;
  const std::string plant = plant_dir.filename().string();
  for (const auto& mod_dir : list_dirs(plant_dir)) {
    CropOutcome oc{plant, mod_dir.filename().string(), std::nullopt, {}};
    auto frames = list_frames(mod_dir);
    std::optional<fs::path> latest;
    for (const auto& f : frames)
      if (fs::exists(label_path_for(f))) latest = f;
    if (!latest) {
      oc.skipped = "no labeled frame";
      log::warn("skip " + plant + "/" + oc.modality + ": no labeled frame");
      outcomes.push_back(oc);
      continue;
    }
    const Box box = label_box(read_labels(label_path_for(*latest)), params.margin);
    oc.box = box;
    const fs::path out_dir = out_plant_dir / oc.modality;
    for (const auto& f : frames) {
      auto img = crop(read_image(f), box);
      const int interp = box.h >= params.size ? cv::INTER_AREA : cv::INTER_LINEAR;
      auto resized = from_mat(resize_to(to_mat(img), params.size, interp)).clamp(0, 1);
      write_image(out_dir / (f.stem().string() + ".png"), resized);
      if (fs::exists(label_path_for(f))) {
        auto lab = crop(read_labels(label_path_for(f)), box).to(torch::kFloat).unsqueeze(0);
        auto lr = from_mat(resize_to(to_mat(lab), params.size, cv::INTER_NEAREST))[0].round().to(torch::kLong);
        write_labels(out_dir / "labels" / (f.stem().string() + ".png"), lr);
      }
    }
    outcomes.push_back(oc);
  }
  return outcomes;
}

std::vector<PairRecord> select_pairs(const fs::path& root, const PairRule& rule) {
  std::vector<PairRecord> records;
  std::map<fs::path, int64_t> count_cache;
  auto count = [&](const fs::path& p) {
    auto it = count_cache.find(p);
    if (it != count_cache.end()) return it->second;
    return count_cache[p] = instance_count(p);
  };
  for (const auto& plant_dir : list_dirs(root)) {
    auto xs = list_frames(plant_dir / rule.modality_x);
    auto ys = list_frames(plant_dir / rule.modality_y);
    std::set<std::string> stamps;
    for (const auto& f : xs) stamps.insert(f.stem().string());
    for (const auto& f : ys) stamps.insert(f.stem().string());
    std::vector<std::string> order(stamps.begin(), stamps.end());
    auto pos = [&](const fs::path& f) {
      return std::lower_bound(order.begin(), order.end(), f.stem().string()) - order.begin();
    };
    for (const auto& fx : xs) {
      for (const auto& fy : ys) {
        if (std::abs(pos(fx) - pos(fy)) < rule.min_frame_gap) continue;
        const auto lx = label_path_for(fx), ly = label_path_for(fy);
        const bool labeled = fs::exists(lx) && fs::exists(ly);
        if (labeled && count(lx) != count(ly)) continue;
        if (!labeled && !rule.allow_unlabeled) continue;
        PairRecord r;
        r.moving_path = fx;
        r.fixed_path = fy;
        if (labeled) {
          r.moving_label_path = lx;
          r.fixed_label_path = ly;
        }
        r.moving_mask_path = mask_path_for(fx);
        r.fixed_mask_path = mask_path_for(fy);
        r.plant_id = plant_dir.filename().string();
        r.t_moving = fx.stem().string();
        r.t_fixed = fy.stem().string();
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

Splits make_splits(const std::vector<PairRecord>& records, size_t train_n, size_t test_n, uint64_t seed) {
  std::vector<PairRecord> labeled, unlabeled;
  for (const auto& r : records) (r.labeled() ? labeled : unlabeled).push_back(r);
  std::mt19937_64 rng(seed);
  std::shuffle(labeled.begin(), labeled.end(), rng);
  Splits s;
  const size_t nt = std::min(test_n, labeled.size());
  s.test.assign(labeled.begin(), labeled.begin() + static_cast<std::ptrdiff_t>(nt));
  std::vector<PairRecord> pool =
      unlabeled.empty() ? std::vector<PairRecord>(labeled.begin() + static_cast<std::ptrdiff_t>(nt), labeled.end())
                        : unlabeled;
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(train_n, pool.size()));
  for (auto& r : pool) {
    r.moving_label_path.reset();
    r.fixed_label_path.reset();
  }
  s.train = std::move(pool);
  return s;
}

size_t generate_masks(const fs::path& root, const roi::MaskParams& params,
                      const std::vector<std::string>& dark_modalities) {
  size_t written = 0;
  for (const auto& plant_dir : list_dirs(root)) {
    for (const auto& mod_dir : list_dirs(plant_dir)) {
      roi::MaskParams p = params;
      const auto mod = mod_dir.filename().string();
      if (std::find(dark_modalities.begin(), dark_modalities.end(), mod) != dark_modalities.end())
        p.polarity = roi::Polarity::Dark;
      for (const auto& f : list_frames(mod_dir)) {
        write_mask(mask_path_for(f), roi::gen_roi_mask(read_image(f), p));
        ++written;
      }
    }
  }
  return written;
}

// ---- batches ----------------------------------------------------------------

PairBatch PairBatch::index(const torch::Tensor& rows) const {
  PairBatch b;
  b.moving = moving.index_select(0, rows);
  b.fixed = fixed.index_select(0, rows);
  b.moving_mask = moving_mask.index_select(0, rows);
  b.fixed_mask = fixed_mask.index_select(0, rows);
  if (moving_labels.defined()) b.moving_labels = moving_labels.index_select(0, rows);
  if (fixed_labels.defined()) b.fixed_labels = fixed_labels.index_select(0, rows);
  return b;
}

PairBatch load_records(const std::vector<PairRecord>& records, int64_t channels, bool with_labels) {
  if (records.empty()) throw PreconditionError("load_records: no records");
  std::vector<torch::Tensor> mv, fx, mm, fm, ml, fl;
  for (const auto& r : records) {
    mv.push_back(to_channels(read_image(r.moving_path), channels));
    fx.push_back(to_channels(read_image(r.fixed_path), channels));
    mm.push_back(read_mask(r.moving_mask_path).to(torch::kFloat).unsqueeze(0));
    fm.push_back(read_mask(r.fixed_mask_path).to(torch::kFloat).unsqueeze(0));
    if (with_labels) {
      if (!r.labeled()) throw PreconditionError("load_records: record without labels " + r.moving_path.string());
      ml.push_back(read_labels(*r.moving_label_path).unsqueeze(0));
      fl.push_back(read_labels(*r.fixed_label_path).unsqueeze(0));
    }
  }
  PairBatch b;
  b.moving = torch::stack(mv);
  b.fixed = torch::stack(fx);
  b.moving_mask = torch::stack(mm);
  b.fixed_mask = torch::stack(fm);
  if (with_labels) {
    b.moving_labels = torch::stack(ml);
    b.fixed_labels = torch::stack(fl);
  }
  return b;
}

SynthSet synth_set(const SynthParams& params, int64_t n, uint64_t seed, const roi::MaskParams& mask_params) {
  if (n < 1) throw ConfigError("synth_set: n must be positive");
  std::vector<torch::Tensor> mv, fx, mm, fm, ml, fl, phis;
  for (int64_t i = 0; i < n; ++i) {
    auto p = synth_pair(params, pair_seed(seed, static_cast<uint64_t>(i)));
    mm.push_back(roi::gen_roi_mask(p.moving, mask_params).to(torch::kFloat).unsqueeze(0));
    fm.push_back(roi::gen_roi_mask(p.fixed, mask_params).to(torch::kFloat).unsqueeze(0));
    mv.push_back(p.moving);
    fx.push_back(p.fixed);
    ml.push_back(p.moving_labels.unsqueeze(0));
    fl.push_back(p.fixed_labels.unsqueeze(0));
    phis.push_back(p.phi);
  }
  SynthSet s;
  s.batch = {torch::stack(mv), torch::stack(fx), torch::stack(mm), torch::stack(fm), torch::stack(ml), torch::stack(fl)};
  s.phi_true = torch::stack(phis);
  return s;
}

std::vector<PairRecord> write_synth_dataset(const fs::path& root, const SynthParams& params, int64_t n, uint64_t seed,
                                            const roi::MaskParams& mask_params) {
  std::vector<PairRecord> records;
  for (int64_t i = 0; i < n; ++i) {
    auto p = synth_pair(params, pair_seed(seed, static_cast<uint64_t>(i)));
    char name[32];
    std::snprintf(name, sizeof name, "plant%04lld", static_cast<long long>(i));
    PairRecord r;
    r.plant_id = name;
    r.t_moving = "t0";
    r.t_fixed = "t1";
    r.moving_path = root / name / "rgb" / "t0.png";
    r.fixed_path = root / name / "ir" / "t1.png";
    r.moving_label_path = label_path_for(r.moving_path);
    r.fixed_label_path = label_path_for(r.fixed_path);
    r.moving_mask_path = mask_path_for(r.moving_path);
    r.fixed_mask_path = mask_path_for(r.fixed_path);
    write_image(r.moving_path, p.moving);
    write_image(r.fixed_path, p.fixed);
    write_labels(*r.moving_label_path, p.moving_labels);
    write_labels(*r.fixed_label_path, p.fixed_labels);
    // masks from the stored (quantized) rasters so disk and regenerated masks agree
    write_mask(r.moving_mask_path, roi::gen_roi_mask(read_image(r.moving_path), mask_params));
    write_mask(r.fixed_mask_path, roi::gen_roi_mask(read_image(r.fixed_path), mask_params));
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace mambareg::data
