#include "mambareg/training.hpp"

#include "mambareg/log.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>

namespace mambareg::train {

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  }
}

MambaMode take_mode(const json& j, const char* key, MambaMode fallback) {
  return j.contains(key) ? parse_mamba_mode(j.at(key).get<std::string>()) : fallback;
}

torch::Tensor rows(int64_t begin, int64_t end) { return torch::arange(begin, end, torch::kLong); }

TrainPairs slice(const TrainPairs& p, const torch::Tensor& idx) {
  TrainPairs b;
  b.moving = p.moving.index_select(0, idx);
  b.fixed = p.fixed.index_select(0, idx);
  if (p.moving_mask.defined()) b.moving_mask = p.moving_mask.index_select(0, idx);
  if (p.fixed_mask.defined()) b.fixed_mask = p.fixed_mask.index_select(0, idx);
  return b;
}

void check_pairs(const TrainPairs& p, const TrainConfig& cfg) {
  require_dim(p.moving, 4, "training pairs");
  require_same_shape(p.moving, p.fixed, "training pairs");
  if (p.moving.size(1) != cfg.net.channels)
    throw ConfigError("training pairs have " + std::to_string(p.moving.size(1)) + " channels, network expects " +
                      std::to_string(cfg.net.channels));
}

std::shared_ptr<torch::optim::Adam> make_adam(torch::nn::Module& net, double lr) {
  return std::make_shared<torch::optim::Adam>(net.parameters(), torch::optim::AdamOptions(lr));
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
}

torch::Tensor epoch_order(int64_t n, uint64_t seed, int64_t epoch) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(data::pair_seed(seed, static_cast<uint64_t>(epoch) + 0x5eed));
  return torch::randperm(n, gen, torch::kLong);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (poly_power < 0) throw ConfigError("poly_power must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (image_size < 8) throw ConfigError("image_size must be >= 8");
  if (image_size % (int64_t{1} << net.unet_depth) != 0)
    throw ConfigError("image_size must be divisible by 2^unet_depth");
  weights.validate();
}

double TrainConfig::lr_at(int64_t epoch) const {
  return lr * std::pow(1.0 - static_cast<double>(epoch) / static_cast<double>(epochs), poly_power);
}

json to_json(const TrainConfig& c) {
  const auto& a = c.net.ablation;
  return json{
      {"epochs", c.epochs},
      {"lr", c.lr},
      {"poly_power", c.poly_power},
      {"seed", c.seed},
      {"batch_size", c.batch_size},
      {"image_size", c.image_size},
      {"weights", {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"gamma", c.weights.gamma}, {"delta", c.weights.delta}}},
      {"net",
       {{"channels", c.net.channels},
        {"code_channels", c.net.code_channels},
        {"n_blocks", c.net.n_blocks},
        {"state_dim", c.net.state_dim},
        {"unet_depth", c.net.unet_depth},
        {"unet_base", c.net.unet_base},
        {"ablation",
         {{"mdfe", std::string(to_string(a.mdfe))},
          {"mife", std::string(to_string(a.mife))},
          {"m3rm", std::string(to_string(a.m3rm))},
          {"roi_mask", a.roi_mask}}}}},
  };
}

TrainConfig config_from_json(const json& j) {
  reject_unknown(j, {"epochs", "lr", "poly_power", "seed", "batch_size", "image_size", "weights", "net"}, "train config");
  TrainConfig c;
  take(j, "epochs", c.epochs);
  take(j, "lr", c.lr);
  take(j, "poly_power", c.poly_power);
  take(j, "seed", c.seed);
  take(j, "batch_size", c.batch_size);
  take(j, "image_size", c.image_size);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    reject_unknown(w, {"alpha", "beta", "gamma", "delta"}, "weights");
    take(w, "alpha", c.weights.alpha);
    take(w, "beta", c.weights.beta);
    take(w, "gamma", c.weights.gamma);
    take(w, "delta", c.weights.delta);
  }
  if (j.contains("net")) {
    const auto& n = j.at("net");
    reject_unknown(n, {"channels", "code_channels", "n_blocks", "state_dim", "unet_depth", "unet_base", "ablation"}, "net");
    take(n, "channels", c.net.channels);
    take(n, "code_channels", c.net.code_channels);
    take(n, "n_blocks", c.net.n_blocks);
    take(n, "state_dim", c.net.state_dim);
    take(n, "unet_depth", c.net.unet_depth);
    take(n, "unet_base", c.net.unet_base);
    if (n.contains("ablation")) {
      const auto& a = n.at("ablation");
      if (a.is_string()) {
        c.net.ablation = model::ablation_preset(a.get<std::string>());
      } else {
        reject_unknown(a, {"mdfe", "mife", "m3rm", "roi_mask"}, "ablation");
        c.net.ablation.mdfe = take_mode(a, "mdfe", c.net.ablation.mdfe);
        c.net.ablation.mife = take_mode(a, "mife", c.net.ablation.mife);
        c.net.ablation.m3rm = take_mode(a, "m3rm", c.net.ablation.m3rm);
        take(a, "roi_mask", c.net.ablation.roi_mask);
      }
    }
  }
  c.validate();
  return c;
}

uint64_t fnv1a(std::string_view bytes, uint64_t h) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex_digest(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_digest(const TrainConfig& c) { return hex_digest(fnv1a(to_json(c).dump())); }

std::string parameter_digest(const torch::nn::Module& m) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : m.named_parameters()) {
    h = fnv1a(p.key(), h);
    auto t = p.value().detach().contiguous().cpu();
    h = fnv1a(shape_string(t), h);
    h = fnv1a(std::string_view(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size()), h);
  }
  return hex_digest(h);
}

std::string format_stats(const EpochStats& s) {
  return "epoch=" + std::to_string(s.epoch) + " loss=" + fmt(s.loss) + " sim=" + fmt(s.sim) + " smooth=" + fmt(s.smooth) +
         " guid=" + fmt(s.guidance) + " recon=" + fmt(s.recon) + " lr=" + fmt(s.lr);
}

std::vector<EpochStats> parse_stats(std::istream& in) {
  std::vector<EpochStats> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("epoch=", 0) != 0) continue;
    EpochStats s;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      const auto key = tok.substr(0, eq);
      const double v = std::stod(tok.substr(eq + 1));
      if (key == "epoch") s.epoch = static_cast<int64_t>(v);
      else if (key == "loss") s.loss = v;
      else if (key == "sim") s.sim = v;
      else if (key == "smooth") s.smooth = v;
      else if (key == "guid") s.guidance = v;
      else if (key == "recon") s.recon = v;
      else if (key == "lr") s.lr = v;
    }
    out.push_back(s);
  }
  return out;
}

TrainPairs training_view(const data::PairBatch& b) {
  return {b.moving, b.fixed, b.moving_mask, b.fixed_mask};
}

// ---- stage 1 ----------------------------------------------------------------

AGNetRun pretrain_agnet(const TrainPairs& aligned, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  check_pairs(aligned, cfg);
  torch::manual_seed(cfg.seed);
  AGNetRun run;
  run.net = model::AGNet(cfg.net);
  run.net->train();
  run.optimizer = make_adam(*run.net, cfg.lr);
  const int64_t n = aligned.size();
  for (int64_t e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.lr_at(e);
    set_lr(*run.optimizer, lr);
    auto order = epoch_order(n, cfg.seed, e);
    double total = 0;
    for (int64_t s = 0; s < n; s += cfg.batch_size) {
      auto b = slice(aligned, order.slice(0, s, std::min(n, s + cfg.batch_size)));
      run.optimizer->zero_grad();
      auto out = run.net->forward(b.moving, b.fixed);
      auto l = loss::agnet_loss(out.ix_hat, b.moving, out.iy_hat, b.fixed);
      require_finite(l, "agnet loss");
      l.backward();
      run.optimizer->step();
      total += l.item<double>() * static_cast<double>(b.size());
    }
    EpochStats st;
    st.epoch = e + 1;
    st.loss = st.recon = total / static_cast<double>(n);
    st.lr = lr;
    run.history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  run.optimizer->zero_grad();
  run.net->eval();
  return run;
}

std::pair<torch::Tensor, torch::Tensor> guidance_targets(model::AGNet& agnet, const TrainPairs& pairs,
                                                         int64_t batch_size) {
  torch::NoGradGuard no_grad;
  agnet->eval();
  std::vector<torch::Tensor> xs, ys;
  for (int64_t s = 0; s < pairs.size(); s += batch_size) {
    auto idx = rows(s, std::min(pairs.size(), s + batch_size));
    auto d = agnet->disentangle(pairs.moving.index_select(0, idx), pairs.fixed.index_select(0, idx));
    xs.push_back(d.mi_x);
    ys.push_back(d.mi_y);
  }
  return {torch::cat(xs), torch::cat(ys)};
}

// ---- stage 2 ----------------------------------------------------------------

loss::LossComponents stage2_components(model::MambaRegNet& net, const TrainPairs& b, const torch::Tensor& target_x,
                                       const torch::Tensor& target_y, bool roi_mask) {
  auto out = net->forward(b.moving, b.fixed);
  torch::Tensor mask;
  if (roi_mask) {
    if (!b.moving_mask.defined() || !b.fixed_mask.defined()) throw ConfigError("ROI mask enabled but masks missing");
    mask = loss::union_mask(b.moving_mask, b.fixed_mask, out.phi);
  } else {
    mask = torch::ones({b.size(), 1, b.moving.size(2), b.moving.size(3)}, b.moving.options());
  }
  loss::LossComponents c;
  c.sim = loss::sim_loss(out.warped, b.fixed, mask);
  c.smooth = loss::smooth_loss(out.phi);
  c.guidance = loss::guidance_loss(out.parts.mi_x, out.parts.mi_y, target_x, target_y);
  c.recon = loss::recon_loss(out.ix_hat, b.moving, out.iy_hat, b.fixed);
  return c;
}

MambaRegRun train_mambareg(const TrainPairs& pairs, model::AGNet& agnet, const TrainConfig& cfg,
                           const EpochCallback& on_epoch) {
  cfg.validate();
  check_pairs(pairs, cfg);
  const bool roi = cfg.net.ablation.roi_mask;
  if (roi && (!pairs.moving_mask.defined() || !pairs.fixed_mask.defined()))
    throw ConfigError("ablation requires ROI masks but none were provided");
  for (auto& p : agnet->parameters()) {
    p.mutable_grad().reset();
    p.set_requires_grad(false);
  }
  auto [target_x, target_y] = guidance_targets(agnet, pairs, cfg.batch_size);

  torch::manual_seed(cfg.seed);
  MambaRegRun run;
  run.net = model::MambaRegNet(cfg.net);
  run.net->train();
  run.optimizer = make_adam(*run.net, cfg.lr);
  const int64_t n = pairs.size();
  for (int64_t e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.lr_at(e);
    set_lr(*run.optimizer, lr);
    auto order = epoch_order(n, cfg.seed, e);
    EpochStats st;
    st.epoch = e + 1;
    st.lr = lr;
    for (int64_t s = 0; s < n; s += cfg.batch_size) {
      auto idx = order.slice(0, s, std::min(n, s + cfg.batch_size));
      auto b = slice(pairs, idx);
      run.optimizer->zero_grad();
      auto c = stage2_components(run.net, b, target_x.index_select(0, idx), target_y.index_select(0, idx), roi);
      auto l = loss::total_loss(c, cfg.weights);
      require_finite(l, "total loss");
      l.backward();
      run.optimizer->step();
      const double w = static_cast<double>(b.size()) / static_cast<double>(n);
      st.loss += l.item<double>() * w;
      st.sim += c.sim.item<double>() * w;
      st.smooth += c.smooth.item<double>() * w;
      st.guidance += c.guidance.item<double>() * w;
      st.recon += c.recon.item<double>() * w;
    }
    run.history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  run.net->eval();
  return run;
}

// ---- inference / evaluation --------------------------------------------------

Registration infer_register(model::MambaRegNet& net, const torch::Tensor& i_x, const torch::Tensor& i_y) {
  torch::NoGradGuard no_grad;
  const bool was_training = net->is_training();
  net->eval();
  Registration r;
  r.phi = net->predict_field(i_x, i_y);
  r.warped = reg::stn_warp(i_x, r.phi);
  net->train(was_training);
  return r;
}

namespace {
std::vector<metrics::MetricReport> reports_for(const data::PairBatch& pairs, const torch::Tensor& warped,
                                               const torch::Tensor& phi, int64_t offset,
                                               metrics::DiceConvention convention) {
  std::vector<metrics::MetricReport> out;
  auto idx = rows(offset, offset + warped.size(0));
  auto ml = pairs.moving_labels.index_select(0, idx);
  auto fl = pairs.fixed_labels.index_select(0, idx);
  auto fixed = pairs.fixed.index_select(0, idx);
  auto wl = reg::warp_labels(ml, phi);
  for (int64_t i = 0; i < warped.size(0); ++i)
    out.push_back(metrics::image_report(warped[i], fixed[i], wl[i][0], fl[i][0], convention));
  return out;
}

void require_labels(const data::PairBatch& pairs) {
  if (!pairs.moving_labels.defined() || !pairs.fixed_labels.defined())
    throw PreconditionError("evaluation needs labeled pairs");
}
}  // namespace

std::vector<metrics::MetricReport> evaluate(model::MambaRegNet& net, const data::PairBatch& pairs, int64_t batch_size,
                                            metrics::DiceConvention convention) {
  require_labels(pairs);
  std::vector<metrics::MetricReport> all;
  for (int64_t s = 0; s < pairs.size(); s += batch_size) {
    auto idx = rows(s, std::min(pairs.size(), s + batch_size));
    auto r = infer_register(net, pairs.moving.index_select(0, idx), pairs.fixed.index_select(0, idx));
    auto part = reports_for(pairs, r.warped, r.phi, s, convention);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

std::vector<metrics::MetricReport> evaluate_identity(const data::PairBatch& pairs, metrics::DiceConvention convention) {
  require_labels(pairs);
  auto phi = torch::zeros({pairs.size(), 2, pairs.moving.size(2), pairs.moving.size(3)}, pairs.moving.options());
  return reports_for(pairs, pairs.moving, phi, 0, convention);
}

// ---- checkpoints -----------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, torch::nn::Module& net, const CheckpointMeta& meta,
                     torch::optim::Optimizer* optimizer) {
  torch::serialize::OutputArchive ar;
  ar.write("version", c10::IValue(kCheckpointVersion));
  ar.write("kind", c10::IValue(meta.kind));
  ar.write("config", c10::IValue(to_json(meta.config).dump()));
  ar.write("config_digest", c10::IValue(config_digest(meta.config)));
  ar.write("epoch", c10::IValue(meta.epoch));
  ar.write("metrics", c10::IValue(meta.metrics.dump()));
  for (const auto& p : net.named_parameters()) ar.write("params." + p.key(), p.value().detach());
  if (optimizer) {
    torch::serialize::OutputArchive opt;
    optimizer->save(opt);
    ar.write("optimizer", opt);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ar.save_to(path.string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw PreconditionError("missing checkpoint " + path.string());
  torch::serialize::InputArchive ar;
  ar.load_from(path.string());
  c10::IValue v;
  CheckpointMeta m;
  ar.read("version", v);
  m.version = v.toInt();
  if (m.version > kCheckpointVersion)
    throw ConfigError("checkpoint version " + std::to_string(m.version) + " is newer than supported");
  ar.read("kind", v);
  m.kind = v.toStringRef();
  ar.read("config", v);
  m.config = config_from_json(json::parse(v.toStringRef()));
  ar.read("config_digest", v);
  m.config_digest = v.toStringRef();
  if (m.config_digest != config_digest(m.config)) throw ConfigError("checkpoint config digest mismatch");
  ar.read("epoch", v);
  m.epoch = v.toInt();
  ar.read("metrics", v);
  m.metrics = json::parse(v.toStringRef());
  return m;
}

void load_parameters(const std::filesystem::path& path, torch::nn::Module& net, torch::optim::Optimizer* optimizer) {
  torch::serialize::InputArchive ar;
  ar.load_from(path.string());
  torch::NoGradGuard no_grad;
  for (auto& p : net.named_parameters()) {
    torch::Tensor t;
    if (!ar.try_read("params." + p.key(), t)) throw ConfigError("checkpoint lacks parameter " + p.key());
    if (t.sizes() != p.value().sizes())
      throw ShapeError("checkpoint parameter " + p.key() + " has shape " + shape_string(t));
    p.value().copy_(t);
  }
  if (optimizer) {
    torch::serialize::InputArchive opt;
    if (ar.try_read("optimizer", opt)) optimizer->load(opt);
  }
}

model::AGNet load_agnet(const std::filesystem::path& path) {
  auto meta = read_checkpoint_meta(path);
  if (meta.kind != "agnet") throw ConfigError(path.string() + " holds a '" + meta.kind + "' checkpoint, not agnet");
  model::AGNet net(meta.config.net);
  load_parameters(path, *net);
  net->eval();
  return net;
}

model::MambaRegNet load_mambareg(const std::filesystem::path& path) {
  auto meta = read_checkpoint_meta(path);
  if (meta.kind != "mambareg") throw ConfigError(path.string() + " holds a '" + meta.kind + "' checkpoint, not mambareg");
  model::MambaRegNet net(meta.config.net);
  load_parameters(path, *net);
  net->eval();
  return net;
}

}  // namespace mambareg::train
