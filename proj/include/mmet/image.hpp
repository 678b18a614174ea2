#pragma once

#include <vector>

#include "mmet/dataset.hpp"
#include "mmet/rng.hpp"

namespace mmet::image {

// Bilinear resize with half-pixel centers; output clamped to [0, 1].
Image resize(const Image& img, std::size_t height, std::size_t width);

// Non-overlapping p x p patches in row-major order, each flattened as
// (row, col, channel).
struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch_size = 0;
  std::vector<double> patches;  // count() x patch_dim()

  std::size_t count() const { return rows * cols; }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  const double* patch(std::size_t i) const { return patches.data() + i * patch_dim(); }
};

PatchGrid patchify(const Image& img, std::size_t patch_size);
Image unpatchify(const PatchGrid& grid);

enum class MaskStrategy { Random, Region };

struct ImageMaskPlan {
  std::vector<std::size_t> positions;  // ascending patch indices
  std::vector<double> targets;         // positions.size() x patch_dim, original pixels
  MaskStrategy strategy = MaskStrategy::Random;
  bool degenerate = false;  // region plan found no candidate patch

  bool empty() const { return positions.empty(); }
  std::size_t size() const { return positions.size(); }
};

// floor(ratio * M) patches drawn uniformly without replacement.
ImageMaskPlan random_mask_plan(const PatchGrid& grid, double ratio, Rng& rng);
std::vector<std::size_t> random_mask_positions(std::size_t num_patches, double ratio, Rng& rng);

// Patches whose footprint overlaps the box by at least half the patch area.
std::vector<std::size_t> region_candidates(const PatchGrid& grid, const BBox& box);
double patch_overlap_fraction(const PatchGrid& grid, std::size_t patch, const BBox& box);

/// Draws floor(ratio * M) patches from the pedestrian-region candidates.
/// When there are fewer candidates than that, all candidates are masked; with
/// none, the plan is empty and flagged degenerate.
ImageMaskPlan region_mask_plan(const PatchGrid& grid, const BBox& box, double ratio, Rng& rng);

ImageMaskPlan make_mask_plan(MaskStrategy strategy, const PatchGrid& grid, const BBox& box,
                             double ratio, Rng& rng);

}  // namespace mmet::image
