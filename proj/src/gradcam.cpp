#include "mmet/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mmet/error.hpp"
#include "mmet/ops.hpp"
#include "mmet/text.hpp"

namespace mmet {

namespace {

struct Forward {
  ImageEncoding image;
  Tensor logits;  // [1, classes]
};

Forward id_logits(const Model& model, const image::PatchGrid& grid, std::size_t text_length) {
  if (model.config().num_classes == 0) throw UsageError("grad_cam: model has no ID head");
  Forward f;
  f.image = encode_image(model, std::span<const image::PatchGrid>(&grid, 1));
  const auto caption = text::empty_caption(text_length);
  auto fused = fuse(model, f.image, encode_text(model, std::span<const text::TokenSequence>(&caption, 1)));
  f.logits = ops::linear(fused.h_cls(), model.param("head.id.w"), model.param("head.id.b"));
  return f;
}

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Black - red - yellow - white.
void heat_color(double v, double rgb[3]) {
  rgb[0] = std::clamp(3.0 * v, 0.0, 1.0);
  rgb[1] = std::clamp(3.0 * v - 1.0, 0.0, 1.0);
  rgb[2] = std::clamp(3.0 * v - 2.0, 0.0, 1.0);
}

}  // namespace

Heatmap grad_cam(const Model& model, const image::PatchGrid& grid, std::size_t target_class,
                 const GradCamOptions& options) {
  const auto classes = model.config().num_classes;
  if (target_class >= classes)
    throw UsageError("grad_cam: target class " + std::to_string(target_class) + " outside [0, " +
                     std::to_string(classes) + ")");
  const auto depth = model.config().image.depth;
  if (depth == 0) throw UsageError("grad_cam: the image encoder has no blocks");
  const auto block = options.block.value_or(depth - 1);
  if (block >= depth)
    throw UsageError("grad_cam: block " + std::to_string(block) + " outside the " +
                     std::to_string(depth) + "-block image encoder");

  model.clear_grads();
  auto f = id_logits(model, grid, options.text_length);
  Tensor activations = f.image.blocks[block];
  activations.retain_grad();
  const std::size_t row0 = 0, col = target_class;
  auto target = ops::scale(ops::gather_elements(f.logits, std::span(&row0, 1), std::span(&col, 1)),
                           options.logit_scale);
  backward(ops::sum(target));
  model.clear_grads();

  const std::size_t M = grid.count(), d = activations.dim(2);
  const auto A = activations.data();
  Heatmap h{grid.rows, grid.cols, grid.patch_size, std::vector<double>(M, 0.0)};
  if (!activations.has_grad()) return h;
  const auto G = activations.grad();
  std::vector<double> w(d, 0.0);
  for (std::size_t j = 0; j < M; ++j)
    for (std::size_t c = 0; c < d; ++c) w[c] += G[(1 + j) * d + c];
  for (auto& v : w) v /= static_cast<double>(M);
  double peak = 0.0;
  for (std::size_t j = 0; j < M; ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += w[c] * A[(1 + j) * d + c];
    h.values[j] = std::max(0.0, s);
    peak = std::max(peak, h.values[j]);
  }
  if (peak > 0.0)
    for (auto& v : h.values) v /= peak;
  return h;
}

std::size_t predicted_class(const Model& model, const image::PatchGrid& grid,
                            std::size_t text_length) {
  auto f = id_logits(model, grid, text_length);
  const auto v = f.logits.data();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

Localization localization(const Heatmap& heatmap, const image::PatchGrid& grid, const BBox& box,
                          double min_overlap) {
  if (heatmap.rows != grid.rows || heatmap.cols != grid.cols)
    throw UsageError("localization: heatmap and patch grid differ in shape");
  if (!(min_overlap > 0.0 && min_overlap <= 1.0))
    throw UsageError("localization: min_overlap must lie in (0, 1]");
  Localization l;
  for (std::size_t j = 0; j < grid.count(); ++j) {
    if (image::patch_overlap_fraction(grid, j, box) >= min_overlap) {
      l.inside += heatmap.values[j];
      ++l.inside_count;
    } else {
      l.outside += heatmap.values[j];
      ++l.outside_count;
    }
  }
  if (l.inside_count) l.inside /= static_cast<double>(l.inside_count);
  if (l.outside_count) l.outside /= static_cast<double>(l.outside_count);
  return l;
}

std::vector<double> upsample(const Heatmap& heatmap, std::size_t height, std::size_t width) {
  Image small(heatmap.rows, heatmap.cols);
  for (std::size_t r = 0; r < heatmap.rows; ++r)
    for (std::size_t c = 0; c < heatmap.cols; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) small.at(r, c, ch) = heatmap.at(r, c);
  const auto big = image::resize(small, height, width);
  std::vector<double> out(height * width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = big.pixels[i * 3];
  return out;
}

void write_heatmap_pgm(const std::filesystem::path& path, const Heatmap& heatmap,
                       std::size_t height, std::size_t width) {
  const auto v = upsample(heatmap, height, width);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double x : v) out.put(static_cast<char>(to_byte(x)));
  if (!out) throw DataError("failed writing " + path.string());
}

void write_overlay_ppm(const std::filesystem::path& path, const Heatmap& heatmap, const Image& img) {
  const auto v = upsample(heatmap, img.height, img.width);
  Image blended(img.height, img.width);
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      double rgb[3];
      heat_color(v[r * img.width + c], rgb);
      for (std::size_t ch = 0; ch < 3; ++ch)
        blended.at(r, c, ch) = 0.5 * img.at(r, c, ch) + 0.5 * rgb[ch];
    }
  write_ppm(path, blended);
}

void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& heatmap) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t r = 0; r < heatmap.rows; ++r) {
    for (std::size_t c = 0; c < heatmap.cols; ++c) out << (c ? "," : "") << heatmap.at(r, c);
    out << "\n";
  }
}

}  // namespace mmet
