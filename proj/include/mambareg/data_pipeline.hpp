#pragma once

// Image/label/mask file I/O, the synthetic multi-modal pair generator, and
// dataset tooling (crop, pairing, splits, manifest).
//
// On-disk layout:
//   <root>/<plant>/<modality>/<timestamp>.png
//   <root>/<plant>/<modality>/labels/<timestamp>.png      (16-bit instance ids)
//   <root>/<plant>/<modality>/masks/<timestamp>.mask.png   ({0, 255})

#include "mambareg/roi_mask.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mambareg::data {

namespace fs = std::filesystem;

// ---- raster I/O -----------------------------------------------------------

/// [C, H, W] float32 in [0, 1]; C is 1 or 3 (RGB order).
torch::Tensor read_image(const fs::path& path);
void write_image(const fs::path& path, const torch::Tensor& img);

/// [H, W] int64.
torch::Tensor read_labels(const fs::path& path);
void write_labels(const fs::path& path, const torch::Tensor& labels);

/// [H, W] uint8 in {0, 1}; stored as {0, 255}.
torch::Tensor read_mask(const fs::path& path);
void write_mask(const fs::path& path, const torch::Tensor& mask);

/// Channel count conversion used when a network expects `channels` planes.
torch::Tensor to_channels(const torch::Tensor& img, int64_t channels);

// ---- synthetic pairs --------------------------------------------------------

struct SynthParams {
  int64_t size = 64;
  int64_t min_instances = 3;
  int64_t max_instances = 6;
  double max_displacement = 4.0;  // pixels, cap on |phi|
  double smoothing = 16.0;        // control-point spacing of the random field, pixels
  double gamma = 0.8;             // fixed-modality intensity curve v -> v^gamma
  double noise = 0.02;            // fixed-modality additive noise std
  int64_t channels = 1;

  void validate() const;
};

struct SynthPair {
  torch::Tensor moving;         // [C, H, W], modality A
  torch::Tensor fixed;          // [C, H, W], modality B
  torch::Tensor moving_labels;  // [H, W]
  torch::Tensor fixed_labels;   // [H, W]
  torch::Tensor phi;            // [2, H, W]; stn_warp(moving, phi) lines up with fixed
};

/// Bit-reproducible for a given seed.
SynthPair synth_pair(const SynthParams& params, uint64_t seed);

/// Smooth random displacement with max norm drawn in [0.5, 1] * max_displacement.
torch::Tensor random_smooth_field(int64_t H, int64_t W, double max_displacement, double smoothing,
                                  torch::Generator& gen);

// ---- manifest --------------------------------------------------------------

struct PairRecord {
  fs::path moving_path, fixed_path;
  std::optional<fs::path> moving_label_path, fixed_label_path;
  fs::path moving_mask_path, fixed_mask_path;
  std::string plant_id;
  std::string t_moving, t_fixed;

  bool labeled() const { return moving_label_path.has_value() && fixed_label_path.has_value(); }
};

inline constexpr const char* kManifestHeader = "#pairs-v1";

/// Paths are written relative to the manifest's directory.
void write_manifest(const fs::path& path, const std::vector<PairRecord>& records);
/// Returned paths are absolute.
std::vector<PairRecord> read_manifest(const fs::path& path);

// ---- dataset tooling -------------------------------------------------------

struct Box {
  int64_t y0, x0, h, w;
  bool operator==(const Box&) const = default;
};

/// Tight box of nonzero labels, grown by `margin` of its size per side, then squared about its centre.
/// Throws PreconditionError when no label is nonzero.
Box label_box(const torch::Tensor& labels, double margin);

/// Crops with zero fill outside the raster. img is [C, H, W] or [H, W].
torch::Tensor crop(const torch::Tensor& img, const Box& box);

struct CropParams {
  double margin = 0.1;
  int64_t size = 128;
};

struct CropOutcome {
  std::string plant_id, modality;
  std::optional<Box> box;
  std::string skipped;  // reason, empty when cropped
};

/// Crops every frame (and label) of every modality of one plant with the box of its latest labeled frame.
std::vector<CropOutcome> crop_by_latest_labels(const fs::path& plant_dir, const fs::path& out_plant_dir,
                                               const CropParams& params);

struct PairRule {
  std::string modality_x = "rgb";
  std::string modality_y = "ir";
  int64_t min_frame_gap = 0;   // in sorted-frame index units
  bool allow_unlabeled = true;
};

/// Enumerates (X at t1, Y at t2) per plant. Labeled pairs need equal instance counts.
std::vector<PairRecord> select_pairs(const fs::path& root, const PairRule& rule);

struct Splits {
  std::vector<PairRecord> train, test;
};

/// Test drawn from labeled records, train from unlabeled ones (or the remaining labeled ones when
/// none are unlabeled). Train labels are stripped.
Splits make_splits(const std::vector<PairRecord>& records, size_t train_n, size_t test_n, uint64_t seed);

/// Writes masks/<ts>.mask.png next to every image under root; returns the number written.
size_t generate_masks(const fs::path& root, const roi::MaskParams& params, const std::vector<std::string>& dark_modalities);

fs::path mask_path_for(const fs::path& image_path);
fs::path label_path_for(const fs::path& image_path);

// ---- batches ----------------------------------------------------------------

struct PairBatch {
  torch::Tensor moving, fixed;                  // [N, C, H, W]
  torch::Tensor moving_mask, fixed_mask;        // [N, 1, H, W] float
  torch::Tensor moving_labels, fixed_labels;    // [N, 1, H, W] int64, undefined when unlabeled

  int64_t size() const { return moving.size(0); }
  PairBatch index(const torch::Tensor& rows) const;
};

PairBatch load_records(const std::vector<PairRecord>& records, int64_t channels, bool with_labels);

struct SynthSet {
  PairBatch batch;
  torch::Tensor phi_true;  // [N, 2, H, W]
};

/// In-memory synthetic set; masks come from gen_roi_mask.
SynthSet synth_set(const SynthParams& params, int64_t n, uint64_t seed, const roi::MaskParams& mask_params = {});

/// Writes a synthetic set to disk in the standard layout; returns records (all labeled).
std::vector<PairRecord> write_synth_dataset(const fs::path& root, const SynthParams& params, int64_t n, uint64_t seed,
                                            const roi::MaskParams& mask_params = {});

uint64_t pair_seed(uint64_t seed, uint64_t index);

}  // namespace mambareg::data
