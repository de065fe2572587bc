// mambareg command-line driver.

#include "mambareg/log.hpp"
#include "mambareg/training.hpp"
#include "mambareg/viz.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

using namespace mambareg;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitNaN = 3;

struct Global {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out;
  std::string device = "cpu";
  bool quiet = false;
  bool force = false;
};

// ---- config sections ---------------------------------------------------------

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto* key : keys) ok = ok || k == key;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json synth_json(const data::SynthParams& p) {
  return {{"size", p.size},         {"min_instances", p.min_instances}, {"max_instances", p.max_instances},
          {"max_displacement", p.max_displacement}, {"smoothing", p.smoothing}, {"gamma", p.gamma},
          {"noise", p.noise},       {"channels", p.channels}};
}

data::SynthParams synth_from(const json& j) {
  reject_unknown(j, {"size", "min_instances", "max_instances", "max_displacement", "smoothing", "gamma", "noise", "channels"},
                 "synth");
  data::SynthParams p;
  take(j, "size", p.size);
  take(j, "min_instances", p.min_instances);
  take(j, "max_instances", p.max_instances);
  take(j, "max_displacement", p.max_displacement);
  take(j, "smoothing", p.smoothing);
  take(j, "gamma", p.gamma);
  take(j, "noise", p.noise);
  take(j, "channels", p.channels);
  return p;
}

json mask_json(const roi::MaskParams& p) {
  return {{"bins", p.bins},       {"kernel_h", p.kernel_h}, {"kernel_w", p.kernel_w},
          {"min_size", p.min_size}, {"polarity", roi::to_string(p.polarity)}};
}

roi::MaskParams mask_from(const json& j) {
  reject_unknown(j, {"bins", "kernel_h", "kernel_w", "min_size", "polarity"}, "mask");
  roi::MaskParams p;
  take(j, "bins", p.bins);
  take(j, "kernel_h", p.kernel_h);
  take(j, "kernel_w", p.kernel_w);
  take(j, "min_size", p.min_size);
  if (j.contains("polarity")) p.polarity = roi::parse_polarity(j.at("polarity").get<std::string>());
  return p;
}

/// Sections of a resolved config file; every field is optional on input.
struct FileConfig {
  json train = json::object(), synth = json::object(), mask = json::object(), options = json::object();
};

FileConfig load_config(const std::string& path) {
  FileConfig fc;
  if (path.empty()) return fc;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  reject_unknown(j, {"command", "train", "synth", "mask", "options"}, "config");
  if (j.contains("train")) fc.train = j.at("train");
  if (j.contains("synth")) fc.synth = j.at("synth");
  if (j.contains("mask")) fc.mask = j.at("mask");
  if (j.contains("options")) fc.options = j.at("options");
  return fc;
}

// ---- output directory ---------------------------------------------------------

fs::path prepare_out(const Global& g, const std::string& fallback, bool must_be_fresh) {
  fs::path out = g.out.empty() ? fs::path(fallback) : fs::path(g.out);
  if (out.empty()) throw ConfigError("--out is required");
  if (must_be_fresh && fs::exists(out) && !fs::is_empty(out)) {
    if (!g.force) throw PreconditionError(out.string() + " exists and is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
  log::set_file(out / "run.log");
  return out;
}

void write_config(const fs::path& out, const std::string& command, const json& sections) {
  json j = sections;
  j["command"] = command;
  std::ofstream f(out / "config.json");
  f << j.dump(2) << '\n';
}

void check_device(const Global& g) {
  if (g.device != "cpu") throw ConfigError("device '" + g.device + "' is not available in this build (only cpu)");
}

std::string fixed(double v, int digits = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- training overrides ---------------------------------------------------------

struct TrainFlags {
  std::optional<int64_t> epochs, batch_size, code_channels, blocks;
  std::optional<double> lr;
  std::string ablation;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Base learning rate");
    cmd->add_option("--batch-size", batch_size, "Mini-batch size");
    cmd->add_option("--code-channels", code_channels, "Sparse code channels");
    cmd->add_option("--blocks", blocks, "MLCSC blocks per extractor");
    cmd->add_option("--ablation", ablation, "Ablation preset b1..b6")->envname("MAMBAREG_ABLATION");
  }

  train::TrainConfig resolve(const FileConfig& fc, const Global& g) const {
    auto cfg = train::config_from_json(fc.train);
    if (epochs) cfg.epochs = *epochs;
    if (lr) cfg.lr = *lr;
    if (batch_size) cfg.batch_size = *batch_size;
    if (code_channels) cfg.net.code_channels = *code_channels;
    if (blocks) cfg.net.n_blocks = *blocks;
    if (!ablation.empty()) cfg.net.ablation = model::ablation_preset(ablation);
    if (g.seed) cfg.seed = *g.seed;
    cfg.validate();
    return cfg;
  }
};

data::PairBatch load_manifest(const std::string& path, int64_t channels, bool with_labels) {
  auto records = data::read_manifest(path);
  if (records.empty()) throw PreconditionError("manifest " + path + " has no pairs");
  return data::load_records(records, channels, with_labels);
}

void check_size(const data::PairBatch& b, const train::TrainConfig& cfg) {
  if (b.moving.size(2) != cfg.image_size || b.moving.size(3) != cfg.image_size)
    log::warn("images are " + shape_string(b.moving) + " but image_size is " + std::to_string(cfg.image_size) +
              "; training on the stored size");
}

train::EpochCallback epoch_logger() {
  return [](const train::EpochStats& s) { log::info(train::format_stats(s)); };
}

// ---- commands ---------------------------------------------------------------------

struct SynthFlags {
  int64_t n = 64;
  bool aligned = false;
  std::optional<int64_t> size, channels;
  std::optional<double> max_displacement, gamma, noise;
};

int cmd_synth(const Global& g, const SynthFlags& f) {
  auto fc = load_config(g.config_path);
  auto p = synth_from(fc.synth);
  auto mp = mask_from(fc.mask);
  if (f.size) p.size = *f.size;
  if (f.channels) p.channels = *f.channels;
  if (f.max_displacement) p.max_displacement = *f.max_displacement;
  if (f.gamma) p.gamma = *f.gamma;
  if (f.noise) p.noise = *f.noise;
  if (f.aligned) p.max_displacement = 0;
  p.validate();
  if (f.n < 1) throw ConfigError("--n must be at least 1");
  const uint64_t seed = g.seed.value_or(3407);
  auto out = prepare_out(g, "", true);
  auto records = data::write_synth_dataset(out, p, f.n, seed, mp);
  data::write_manifest(out / "pairs.tsv", records);
  write_config(out, "synth",
               {{"synth", synth_json(p)}, {"mask", mask_json(mp)}, {"options", {{"n", f.n}, {"seed", seed}}}});
  log::info("wrote " + std::to_string(records.size()) + " pairs");
  return 0;
}

struct MaskFlags {
  std::string root;
  std::vector<std::string> dark;
};

int cmd_gen_masks(const Global& g, const MaskFlags& f) {
  auto fc = load_config(g.config_path);
  auto mp = mask_from(fc.mask);
  auto out = prepare_out(g, f.root, false);
  const auto n = data::generate_masks(f.root, mp, f.dark);
  write_config(out, "gen-masks", {{"mask", mask_json(mp)}, {"options", {{"root", f.root}, {"dark", f.dark}}}});
  log::info("wrote " + std::to_string(n) + " masks under " + f.root);
  return 0;
}

struct BuildFlags {
  std::string root;
  int64_t train_n = 0, test_n = 0;
  data::CropParams crop;
  data::PairRule rule;
  std::vector<std::string> dark = {"ir"};
};

int cmd_build_dataset(const Global& g, const BuildFlags& f) {
  auto fc = load_config(g.config_path);
  auto mp = mask_from(fc.mask);
  auto out = prepare_out(g, "", true);
  const fs::path plants = out / "plants";
  size_t cropped = 0;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(f.root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    for (const auto& oc : data::crop_by_latest_labels(d, plants / d.filename(), f.crop)) {
      if (oc.box) ++cropped;
      else log::warn(oc.plant_id + "/" + oc.modality + " skipped: " + oc.skipped);
    }
  }
  const auto masks = data::generate_masks(plants, mp, f.dark);
  auto records = data::select_pairs(plants, f.rule);
  size_t labeled = 0;
  for (auto& r : records) labeled += r.labeled();
  const size_t test_n = f.test_n > 0 ? static_cast<size_t>(f.test_n) : labeled;
  const size_t train_n = f.train_n > 0 ? static_cast<size_t>(f.train_n) : records.size();
  const uint64_t seed = g.seed.value_or(3407);
  auto splits = data::make_splits(records, train_n, test_n, seed);
  data::write_manifest(out / "pairs.tsv", records);
  data::write_manifest(out / "train.tsv", splits.train);
  data::write_manifest(out / "test.tsv", splits.test);
  write_config(out, "build-dataset",
               {{"mask", mask_json(mp)},
                {"options",
                 {{"root", fs::absolute(f.root).string()},
                  {"seed", seed},
                  {"train_n", f.train_n},
                  {"test_n", f.test_n},
                  {"crop_margin", f.crop.margin},
                  {"crop_size", f.crop.size},
                  {"modality_x", f.rule.modality_x},
                  {"modality_y", f.rule.modality_y},
                  {"min_frame_gap", f.rule.min_frame_gap},
                  {"allow_unlabeled", f.rule.allow_unlabeled},
                  {"dark", f.dark}}}});
  log::info("cropped " + std::to_string(cropped) + " plant/modality sets, wrote " + std::to_string(masks) + " masks");
  log::info("pairs=" + std::to_string(records.size()) + " train=" + std::to_string(splits.train.size()) +
            " test=" + std::to_string(splits.test.size()));
  return 0;
}

struct PretrainFlags {
  std::string data;
  TrainFlags train;
};

int cmd_pretrain(const Global& g, const PretrainFlags& f) {
  check_device(g);
  auto fc = load_config(g.config_path);
  auto cfg = f.train.resolve(fc, g);
  auto out = prepare_out(g, "", false);
  write_config(out, "pretrain", {{"train", train::to_json(cfg)}, {"options", {{"data", fs::absolute(f.data).string()}}}});
  auto batch = load_manifest(f.data, cfg.net.channels, false);
  check_size(batch, cfg);
  log::info("stage 1: " + std::to_string(batch.size()) + " aligned pairs, config " + train::config_digest(cfg));
  auto run = train::pretrain_agnet(train::training_view(batch), cfg, epoch_logger());
  train::CheckpointMeta meta;
  meta.kind = "agnet";
  meta.config = cfg;
  meta.config_digest = train::config_digest(cfg);
  meta.epoch = cfg.epochs;
  meta.metrics = {{"loss", run.history.back().loss}};
  train::save_checkpoint(out / "agnet.pt", *run.net, meta, run.optimizer.get());
  log::info("saved " + (out / "agnet.pt").string() + " params " + train::parameter_digest(*run.net));
  return 0;
}

struct TrainCmdFlags {
  std::string data, agnet, eval_data;
  TrainFlags train;
};

json summary_json(const metrics::MetricReport& m) {
  return {{"dice", m.dice}, {"mse", m.mse}, {"ncc", m.ncc}, {"ssim", m.ssim}};
}

int cmd_train(const Global& g, const TrainCmdFlags& f) {
  check_device(g);
  auto fc = load_config(g.config_path);
  auto cfg = f.train.resolve(fc, g);
  auto out = prepare_out(g, "", false);
  write_config(out, "train",
               {{"train", train::to_json(cfg)},
                {"options",
                 {{"data", fs::absolute(f.data).string()},
                  {"agnet", fs::absolute(f.agnet).string()},
                  {"eval_data", f.eval_data.empty() ? "" : fs::absolute(f.eval_data).string()}}}});
  auto agnet = train::load_agnet(f.agnet);
  // labels are never loaded for stage 2
  auto batch = load_manifest(f.data, cfg.net.channels, false);
  check_size(batch, cfg);
  log::info("stage 2: " + std::to_string(batch.size()) + " pairs, config " + train::config_digest(cfg) + ", agnet " +
            train::parameter_digest(*agnet));
  auto run = train::train_mambareg(train::training_view(batch), agnet, cfg, epoch_logger());
  train::CheckpointMeta meta;
  meta.kind = "mambareg";
  meta.config = cfg;
  meta.config_digest = train::config_digest(cfg);
  meta.epoch = cfg.epochs;
  meta.metrics = {{"loss", run.history.back().loss}};
  if (!f.eval_data.empty()) {
    auto test = load_manifest(f.eval_data, cfg.net.channels, true);
    auto m = metrics::mean_report(train::evaluate(run.net, test, cfg.batch_size));
    meta.metrics["test"] = summary_json(m);
    log::info("test dice=" + fixed(m.dice) + " mse=" + fixed(m.mse, 8) + " ncc=" + fixed(m.ncc) + " ssim=" + fixed(m.ssim));
  }
  train::save_checkpoint(out / "model.pt", *run.net, meta, run.optimizer.get());
  log::info("saved " + (out / "model.pt").string());
  return 0;
}

struct RegisterFlags {
  std::string model, moving, fixed;
};

int cmd_register(const Global& g, const RegisterFlags& f) {
  check_device(g);
  auto out = prepare_out(g, "", false);
  auto net = train::load_mambareg(f.model);
  const auto channels = net->config.channels;
  auto moving = data::to_channels(data::read_image(f.moving), channels);
  auto fixed_img = data::to_channels(data::read_image(f.fixed), channels);
  write_config(out, "register",
               {{"train", train::to_json(train::read_checkpoint_meta(f.model).config)},
                {"options",
                 {{"model", fs::absolute(f.model).string()},
                  {"moving", fs::absolute(f.moving).string()},
                  {"fixed", fs::absolute(f.fixed).string()}}}});
  auto r = train::infer_register(net, moving.unsqueeze(0), fixed_img.unsqueeze(0));
  data::write_image(out / "warped.png", r.warped[0]);
  data::write_image(out / "panel.png", viz::registration_panel(moving, fixed_img, r.warped[0], r.phi[0]));
  torch::save(r.phi[0], (out / "field.pt").string());
  const double peak = r.phi[0].pow(2).sum(0).sqrt().max().item<double>();
  log::info("max displacement " + fixed(peak, 4) + " px; wrote warped.png, panel.png, field.pt");
  return 0;
}

struct EvalFlags {
  std::string model, data, convention = "standard";
  bool identity = false;
  int64_t batch_size = 8;
};

int cmd_evaluate(const Global& g, const EvalFlags& f) {
  check_device(g);
  if (f.identity == !f.model.empty()) throw ConfigError("evaluate needs exactly one of --model or --identity");
  const auto conv = metrics::parse_dice_convention(f.convention);
  auto out = prepare_out(g, "", false);
  json opts = {{"data", fs::absolute(f.data).string()},
               {"dice_convention", metrics::to_string(conv)},
               {"identity", f.identity},
               {"model", f.model.empty() ? "" : fs::absolute(f.model).string()}};
  std::vector<metrics::MetricReport> reports;
  if (f.identity) {
    write_config(out, "evaluate", {{"options", opts}});
    reports = train::evaluate_identity(load_manifest(f.data, 1, true), conv);
  } else {
    auto net = train::load_mambareg(f.model);
    write_config(out, "evaluate", {{"train", train::to_json(train::read_checkpoint_meta(f.model).config)}, {"options", opts}});
    reports = train::evaluate(net, load_manifest(f.data, net->config.channels, true), f.batch_size, conv);
  }
  auto records = data::read_manifest(f.data);
  std::ofstream tsv(out / "report.tsv");
  tsv << "pair\tplant\tdice\tmse\tncc\tssim\n";
  bool nan = false;
  for (size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    nan = nan || r.has_nan();
    tsv << i << '\t' << records[i].plant_id << '\t' << fixed(r.dice, 8) << '\t' << fixed(r.mse, 10) << '\t'
        << fixed(r.ncc, 8) << '\t' << fixed(r.ssim, 8) << '\n';
  }
  auto mean = metrics::mean_report(reports);
  nan = nan || mean.has_nan();
  json summary = summary_json(mean);
  summary["pairs"] = reports.size();
  summary["dice_convention"] = metrics::to_string(conv);
  summary["nan"] = nan;
  std::ofstream(out / "summary.json") << summary.dump(2) << '\n';
  std::cout << "pairs  " << reports.size() << "\n"
            << "dice   " << fixed(100 * mean.dice, 2) << "\n"
            << "mse    " << fixed(mean.mse, 6) << "\n"
            << "ncc    " << fixed(100 * mean.ncc, 2) << "\n"
            << "ssim   " << fixed(100 * mean.ssim, 2) << "\n";
  if (nan) {
    log::error("NaN in evaluation metrics");
    return kExitNaN;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Unsupervised multi-modal deformable registration"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--config", g.config_path, "JSON config (same layout as a run's config.json)")
      ->envname("MAMBAREG_CONFIG")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed")->envname("MAMBAREG_SEED");
  app.add_option("--out", g.out, "Output directory")->envname("MAMBAREG_OUT");
  app.add_option("--device", g.device, "Compute device")->envname("MAMBAREG_DEVICE");
  app.add_flag("--quiet", g.quiet, "Only warnings and errors on stderr")->envname("MAMBAREG_QUIET");
  app.add_flag("--force", g.force, "Replace a non-empty output directory");

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-modal dataset");
  synth->add_option("--n", sf.n, "Number of pairs");
  synth->add_flag("--aligned", sf.aligned, "Zero deformation (stage-1 pairs)");
  synth->add_option("--size", sf.size, "Image side in pixels");
  synth->add_option("--channels", sf.channels, "1 or 3");
  synth->add_option("--max-displacement", sf.max_displacement, "Peak displacement in pixels");
  synth->add_option("--gamma", sf.gamma, "Fixed-modality intensity exponent");
  synth->add_option("--noise", sf.noise, "Fixed-modality noise std");

  MaskFlags mf;
  auto* masks = app.add_subcommand("gen-masks", "Write ROI masks next to every frame of a dataset root");
  masks->add_option("--root", mf.root, "Dataset root (plant/modality/frames)")->required();
  masks->add_option("--dark", mf.dark, "Modalities whose foreground is dark");

  BuildFlags bf;
  auto* build = app.add_subcommand("build-dataset", "Crop, mask, pair and split a raw plant dataset");
  build->add_option("--root", bf.root, "Raw root (plant/modality/frames with labels/)")->required()->check(CLI::ExistingDirectory);
  build->add_option("--train-n", bf.train_n, "Training pairs (0 = all available)");
  build->add_option("--test-n", bf.test_n, "Test pairs (0 = all labeled)");
  build->add_option("--crop-size", bf.crop.size, "Crop output side");
  build->add_option("--margin", bf.crop.margin, "Crop margin fraction");
  build->add_option("--modality-x", bf.rule.modality_x, "Moving modality");
  build->add_option("--modality-y", bf.rule.modality_y, "Fixed modality");
  build->add_option("--min-gap", bf.rule.min_frame_gap, "Minimum frame gap between paired frames");
  build->add_option("--dark", bf.dark, "Modalities whose foreground is dark");

  PretrainFlags pf;
  auto* pretrain = app.add_subcommand("pretrain", "Stage 1: train the guidance network on aligned pairs");
  pretrain->add_option("--data", pf.data, "Manifest of aligned pairs")->required()->check(CLI::ExistingFile);
  pf.train.attach(pretrain);

  TrainCmdFlags tf;
  auto* trn = app.add_subcommand("train", "Stage 2: train the registration network");
  trn->add_option("--data", tf.data, "Training manifest")->required()->check(CLI::ExistingFile);
  trn->add_option("--agnet", tf.agnet, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  trn->add_option("--eval-data", tf.eval_data, "Labeled manifest evaluated after training")->check(CLI::ExistingFile);
  tf.train.attach(trn);

  RegisterFlags rf;
  auto* reg = app.add_subcommand("register", "Register one image pair and write a figure panel");
  reg->add_option("--model", rf.model, "Registration checkpoint")->required()->check(CLI::ExistingFile);
  reg->add_option("--moving", rf.moving, "Moving image")->required()->check(CLI::ExistingFile);
  reg->add_option("--fixed", rf.fixed, "Fixed image")->required()->check(CLI::ExistingFile);

  EvalFlags ef;
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint (or the identity warp) on a labeled manifest");
  eval->add_option("--model", ef.model, "Registration checkpoint")->check(CLI::ExistingFile);
  eval->add_flag("--identity", ef.identity, "Score phi = 0 instead of a model");
  eval->add_option("--data", ef.data, "Labeled manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--dice-convention", ef.convention, "standard or as-printed")->envname("MAMBAREG_DICE_CONVENTION");
  eval->add_option("--batch-size", ef.batch_size, "Inference batch size");

  CLI11_PARSE(app, argc, argv);
  log::set_quiet(g.quiet);
  try {
    if (synth->parsed()) return cmd_synth(g, sf);
    if (masks->parsed()) return cmd_gen_masks(g, mf);
    if (build->parsed()) return cmd_build_dataset(g, bf);
    if (pretrain->parsed()) return cmd_pretrain(g, pf);
    if (trn->parsed()) return cmd_train(g, tf);
    if (reg->parsed()) return cmd_register(g, rf);
    if (eval->parsed()) return cmd_evaluate(g, ef);
  } catch (const ConfigError& e) {
    log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 0;
}
