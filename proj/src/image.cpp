#include "mmet/image.hpp"

#include <algorithm>
#include <cmath>

#include "mmet/error.hpp"

namespace mmet::image {

Image resize(const Image& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw UsageError("resize: target size must be positive");
  if (img.height == height && img.width == width) return img;
  Image out(height, width);
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  const double max_y = static_cast<double>(img.height - 1);
  const double max_x = static_cast<double>(img.width - 1);
  for (std::size_t r = 0; r < height; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const auto y1 = std::min(y0 + 1, img.height - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < width; ++c) {
      const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(std::floor(x));
      const auto x1 = std::min(x0 + 1, img.width - 1);
      const double fx = x - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double top = img.at(y0, x0, ch) * (1.0 - fx) + img.at(y0, x1, ch) * fx;
        const double bottom = img.at(y1, x0, ch) * (1.0 - fx) + img.at(y1, x1, ch) * fx;
        out.at(r, c, ch) = std::clamp(top * (1.0 - fy) + bottom * fy, 0.0, 1.0);
      }
    }
  }
  return out;
}

PatchGrid patchify(const Image& img, std::size_t p) {
  if (p == 0 || img.height % p != 0 || img.width % p != 0)
    throw ConfigError("patchify: image " + std::to_string(img.height) + "x" +
                      std::to_string(img.width) + " (H x W) is not divisible by patch size " +
                      std::to_string(p));
  PatchGrid g;
  g.rows = img.height / p;
  g.cols = img.width / p;
  g.patch_size = p;
  g.patches.resize(g.count() * g.patch_dim());
  for (std::size_t pr = 0; pr < g.rows; ++pr)
    for (std::size_t pc = 0; pc < g.cols; ++pc) {
      double* dst = g.patches.data() + (pr * g.cols + pc) * g.patch_dim();
      for (std::size_t r = 0; r < p; ++r) {
        const double* src = img.pixels.data() + ((pr * p + r) * img.width + pc * p) * 3;
        std::copy_n(src, p * 3, dst + r * p * 3);
      }
    }
  return g;
}

Image unpatchify(const PatchGrid& g) {
  const std::size_t p = g.patch_size;
  Image img(g.rows * p, g.cols * p);
  for (std::size_t pr = 0; pr < g.rows; ++pr)
    for (std::size_t pc = 0; pc < g.cols; ++pc) {
      const double* src = g.patch(pr * g.cols + pc);
      for (std::size_t r = 0; r < p; ++r)
        std::copy_n(src + r * p * 3, p * 3,
                    img.pixels.data() + ((pr * p + r) * img.width + pc * p) * 3);
    }
  return img;
}

namespace {

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("mask ratio must lie in (0, 1)");
}

std::size_t target_count(std::size_t m, double ratio) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(m)));
}

ImageMaskPlan plan_from(const PatchGrid& grid, std::vector<std::size_t> positions,
                        MaskStrategy strategy) {
  std::sort(positions.begin(), positions.end());
  ImageMaskPlan plan;
  plan.strategy = strategy;
  for (auto pos : positions) {
    if (pos >= grid.count()) throw UsageError("mask position outside the patch grid");
    plan.targets.insert(plan.targets.end(), grid.patch(pos), grid.patch(pos) + grid.patch_dim());
  }
  plan.positions = std::move(positions);
  return plan;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

std::vector<std::size_t> random_mask_positions(std::size_t m, double ratio, Rng& rng) {
  check_ratio(ratio);
  auto pos = sample_without_replacement(iota(m), target_count(m, ratio), rng);
  std::sort(pos.begin(), pos.end());
  return pos;
}

ImageMaskPlan random_mask_plan(const PatchGrid& grid, double ratio, Rng& rng) {
  return plan_from(grid, random_mask_positions(grid.count(), ratio, rng), MaskStrategy::Random);
}

double patch_overlap_fraction(const PatchGrid& grid, std::size_t patch, const BBox& box) {
  const std::size_t p = grid.patch_size;
  const std::size_t top = (patch / grid.cols) * p, left = (patch % grid.cols) * p;
  const auto overlap = [](std::size_t a0, std::size_t a1, std::size_t b0, std::size_t b1) {
    const auto lo = std::max(a0, b0), hi = std::min(a1, b1);
    return hi > lo ? hi - lo : 0;
  };
  const auto oy = overlap(top, top + p, box.top, box.top + box.height);
  const auto ox = overlap(left, left + p, box.left, box.left + box.width);
  return static_cast<double>(oy * ox) / static_cast<double>(p * p);
}

std::vector<std::size_t> region_candidates(const PatchGrid& grid, const BBox& box) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < grid.count(); ++i)
    if (patch_overlap_fraction(grid, i, box) >= 0.5) out.push_back(i);
  return out;
}

ImageMaskPlan region_mask_plan(const PatchGrid& grid, const BBox& box, double ratio, Rng& rng) {
  check_ratio(ratio);
  if (box.top + box.height > grid.rows * grid.patch_size ||
      box.left + box.width > grid.cols * grid.patch_size)
    throw UsageError("region_mask_plan: bbox lies outside the image");
  auto candidates = region_candidates(grid, box);
  auto picked = sample_without_replacement(candidates, target_count(grid.count(), ratio), rng);
  auto plan = plan_from(grid, std::move(picked), MaskStrategy::Region);
  plan.degenerate = candidates.empty();
  return plan;
}

ImageMaskPlan make_mask_plan(MaskStrategy strategy, const PatchGrid& grid, const BBox& box,
                             double ratio, Rng& rng) {
  return strategy == MaskStrategy::Region ? region_mask_plan(grid, box, ratio, rng)
                                          : random_mask_plan(grid, ratio, rng);
}

}  // namespace mmet::image
