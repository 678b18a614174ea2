#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mmet {

// H x W x 3 image, row-major with interleaved channels, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pixels(h * w * 3, fill) {}
  double& at(std::size_t r, std::size_t c, std::size_t ch) { return pixels[(r * width + c) * 3 + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return pixels[(r * width + c) * 3 + ch];
  }
  bool operator==(const Image&) const = default;
};

// Pedestrian region in pixels.
struct BBox {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  bool operator==(const BBox&) const = default;
};

// Identity-level appearance. Ids index the fixed palettes below.
struct AttributeRecord {
  std::size_t shirt = 0;
  std::size_t pants = 0;
  std::size_t background = 0;
  std::size_t build = 0;
  bool operator==(const AttributeRecord&) const = default;
};

struct Sample {
  Image image;
  std::string caption;
  std::size_t identity = 0;
  std::size_t camera = 0;
  BBox bbox;
  std::size_t domain = 0;
  AttributeRecord attributes;
  bool operator==(const Sample&) const = default;
};

struct Rgb {
  double r, g, b;
};

struct NamedColor {
  const char* name;
  Rgb rgb;
};

const std::vector<NamedColor>& clothing_palette();
const std::vector<Rgb>& background_palette();
// Width/height ratio of the pedestrian box per build.
const std::vector<double>& build_aspects();

std::string render_caption(const AttributeRecord& attributes);

struct DatasetParams {
  std::size_t num_identities = 20;
  std::size_t images_per_identity = 8;
  std::size_t num_cameras = 4;
  std::uint64_t seed = 0;
  std::size_t height = 64;
  std::size_t width = 32;
  std::size_t domain = 0;

  void validate() const;
};

/// Procedurally renders a person dataset.
///
/// Each identity gets one attribute record (distinct shirt/pants pairs while
/// the palette allows). Each image draws its own box, camera and jitter from a
/// per-sample stream, so the output is a pure function of the parameters.
/// Images are quantized to multiples of 1/255 so the PPM export is lossless.
std::vector<Sample> generate_dataset(const DatasetParams& params);
std::vector<Sample> generate_dataset(std::size_t num_identities, std::size_t images_per_identity,
                                     std::size_t num_cameras, std::uint64_t seed);

// Fraction of the image covered by the box.
double bbox_area_fraction(const BBox& box, std::size_t height, std::size_t width);

// ---- PK sampling ---------------------------------------------------------

struct PKBatch {
  std::vector<std::size_t> indices;  // into the sample list, P*K entries
};

/// Draws P identities x K images per batch.
///
/// Batches are organized in epochs: each epoch shuffles the eligible
/// identities (those with at least K samples), cuts them into groups of P and
/// tops the last group up with other identities. The batch for a given step
/// is a pure function of (seed, step).
class PKSampler {
 public:
  PKSampler(const std::vector<Sample>& samples, std::size_t P, std::size_t K, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return per_epoch_; }
  PKBatch batch(std::size_t step);
  std::vector<PKBatch> epoch(std::size_t epoch_index) const;

 private:
  std::size_t P_, K_;
  std::uint64_t seed_;
  std::vector<std::size_t> identities_;  // eligible, ascending
  std::map<std::size_t, std::vector<std::size_t>> by_identity_;
  std::size_t per_epoch_ = 0;
  std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
  std::vector<PKBatch> cache_;
};

// One epoch of PK batches.
std::vector<PKBatch> pk_batches(const std::vector<Sample>& samples, std::size_t P, std::size_t K,
                                std::uint64_t seed);

// ---- evaluation split ----------------------------------------------------

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> query;
  std::vector<std::size_t> gallery;
};

// Identities below num_train_identities train; the rest are held out. Of the
// held-out images, the first image of every (identity, camera) pair is a
// query and the remainder form the gallery.
DatasetSplit split_dataset(const std::vector<Sample>& samples, std::size_t num_train_identities);

// ---- on-disk format ------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& gray);

// Directory with one binary PPM per sample plus manifest.json.
void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

}  // namespace mmet
