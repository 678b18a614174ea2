#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "mmet/dataset.hpp"
#include "mmet/image.hpp"
#include "mmet/model.hpp"

namespace mmet {

// Patch-grid heatmap, row-major, values in [0, 1].
struct Heatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch_size = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct GradCamOptions {
  std::optional<std::size_t> block;  // image-encoder block; default the last
  double logit_scale = 1.0;          // multiplies the target logit before differentiation
  std::size_t text_length = 8;
};

/// Class-activation map of one image over the image encoder's patch states.
/// The target logit is the ID head applied to the fused CLS state with an
/// empty caption. Channel weights are patch-averaged gradients of that logit;
/// the map is the rectified weighted sum, divided by its maximum unless all
/// zero.
Heatmap grad_cam(const Model& model, const image::PatchGrid& grid, std::size_t target_class,
                 const GradCamOptions& options = {});

// Class with the largest ID logit for the image (empty caption).
std::size_t predicted_class(const Model& model, const image::PatchGrid& grid,
                            std::size_t text_length = 8);

struct Localization {
  double inside = 0.0;   // mean over patches inside the box
  double outside = 0.0;  // mean over the remaining patches
  std::size_t inside_count = 0;
  std::size_t outside_count = 0;

  // False when either side has no patches.
  bool focused() const { return inside_count > 0 && outside_count > 0 && inside > outside; }
};

// A patch counts as inside when at least `min_overlap` of its area lies in
// the box; the default matches the region masking planner.
Localization localization(const Heatmap& heatmap, const image::PatchGrid& grid, const BBox& box,
                          double min_overlap = 0.5);

// Bilinear upsampling to the image size, one value per pixel.
std::vector<double> upsample(const Heatmap& heatmap, std::size_t height, std::size_t width);

void write_heatmap_pgm(const std::filesystem::path& path, const Heatmap& heatmap,
                       std::size_t height, std::size_t width);
// Heatmap colors blended onto the image with weight 0.5.
void write_overlay_ppm(const std::filesystem::path& path, const Heatmap& heatmap, const Image& img);
void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& heatmap);

}  // namespace mmet
