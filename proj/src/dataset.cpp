#include "mmet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "json.hpp"
#include <set>
#include <sstream>

#include "mmet/error.hpp"
#include "mmet/rng.hpp"

namespace mmet {

namespace {

constexpr std::uint64_t kTagAttributes = 1;
constexpr std::uint64_t kTagSample = 2;
constexpr std::uint64_t kTagEpoch = 3;
constexpr double kNoise = 0.05;
constexpr double kJitter = 0.04;
constexpr double kMinArea = 0.2;
constexpr double kMaxArea = 0.8;
constexpr double kTorsoShare = 0.45;

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Rgb jitter(const Rgb& c, Rng& rng) {
  return {c.r + uniform(rng, -kJitter, kJitter), c.g + uniform(rng, -kJitter, kJitter),
          c.b + uniform(rng, -kJitter, kJitter)};
}

BBox draw_bbox(std::size_t H, std::size_t W, double aspect, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double hf = uniform(rng, 0.55, 0.92);
    const double a = aspect * uniform(rng, 0.9, 1.1);
    auto h = static_cast<std::size_t>(std::lround(hf * static_cast<double>(H)));
    auto w = static_cast<std::size_t>(std::lround(a * static_cast<double>(h) *
                                                  static_cast<double>(W) * 2.0 /
                                                  static_cast<double>(H)));
    h = std::clamp<std::size_t>(h, 2, H);
    w = std::clamp<std::size_t>(w, 1, W);
    BBox box{0, 0, h, w};
    const double frac = bbox_area_fraction(box, H, W);
    if (frac < kMinArea || frac > kMaxArea) continue;
    box.top = uniform_index(rng, H - h + 1);
    box.left = uniform_index(rng, W - w + 1);
    return box;
  }
  throw ConfigError("cannot place a pedestrian box covering 20-80% of a " + std::to_string(H) +
                    "x" + std::to_string(W) + " image");
}

Image render(const AttributeRecord& attr, std::size_t camera, const BBox& box, std::size_t H,
             std::size_t W, Rng& rng) {
  const auto& bgs = background_palette();
  const Rgb bg = jitter(bgs[(attr.background + camera) % bgs.size()], rng);
  const Rgb shirt = jitter(clothing_palette()[attr.shirt].rgb, rng);
  const Rgb pants = jitter(clothing_palette()[attr.pants].rgb, rng);
  const std::size_t torso_rows =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kTorsoShare * static_cast<double>(box.height))));
  Image img(H, W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      Rgb col = bg;
      if (r >= box.top && r < box.top + box.height && c >= box.left && c < box.left + box.width)
        col = (r - box.top) < torso_rows ? shirt : pants;
      img.at(r, c, 0) = quantize(col.r + uniform(rng, -kNoise, kNoise));
      img.at(r, c, 1) = quantize(col.g + uniform(rng, -kNoise, kNoise));
      img.at(r, c, 2) = quantize(col.b + uniform(rng, -kNoise, kNoise));
    }
  return img;
}

}  // namespace

const std::vector<NamedColor>& clothing_palette() {
  static const std::vector<NamedColor> palette{
      {"red", {0.85, 0.10, 0.10}},    {"blue", {0.10, 0.20, 0.85}},
      {"green", {0.10, 0.65, 0.20}},  {"yellow", {0.95, 0.85, 0.10}},
      {"black", {0.08, 0.08, 0.08}},  {"white", {0.95, 0.95, 0.95}},
      {"purple", {0.55, 0.15, 0.70}}, {"orange", {0.95, 0.50, 0.05}},
  };
  return palette;
}

const std::vector<Rgb>& background_palette() {
  static const std::vector<Rgb> palette{
      {0.50, 0.50, 0.50}, {0.80, 0.75, 0.60}, {0.20, 0.50, 0.50},
      {0.45, 0.30, 0.20}, {0.50, 0.50, 0.25}, {0.35, 0.40, 0.50},
  };
  return palette;
}

const std::vector<double>& build_aspects() {
  static const std::vector<double> aspects{0.35, 0.45, 0.55};
  return aspects;
}

std::string render_caption(const AttributeRecord& a) {
  return std::string("a person wearing ") + clothing_palette().at(a.shirt).name + " shirt and " +
         clothing_palette().at(a.pants).name + " pants";
}

double bbox_area_fraction(const BBox& box, std::size_t height, std::size_t width) {
  return static_cast<double>(box.height * box.width) / static_cast<double>(height * width);
}

void DatasetParams::validate() const {
  if (num_identities == 0 || images_per_identity == 0 || num_cameras == 0)
    throw UsageError("dataset counts must be at least 1 (identities=" +
                     std::to_string(num_identities) + ", images=" +
                     std::to_string(images_per_identity) + ", cameras=" +
                     std::to_string(num_cameras) + ")");
  if (height < 4 || width < 2) throw UsageError("image size too small");
}

std::vector<Sample> generate_dataset(const DatasetParams& p) {
  p.validate();
  const auto& colors = clothing_palette();
  std::vector<std::pair<std::size_t, std::size_t>> combos;
  for (std::size_t s = 0; s < colors.size(); ++s)
    for (std::size_t t = 0; t < colors.size(); ++t) combos.emplace_back(s, t);
  auto attr_rng = derive_rng(p.seed, {kTagAttributes});
  std::shuffle(combos.begin(), combos.end(), attr_rng);

  std::vector<AttributeRecord> records(p.num_identities);
  for (std::size_t id = 0; id < p.num_identities; ++id) {
    auto& rec = records[id];
    rec.shirt = combos[id % combos.size()].first;
    rec.pants = combos[id % combos.size()].second;
    rec.background = uniform_index(attr_rng, background_palette().size());
    rec.build = uniform_index(attr_rng, build_aspects().size());
  }

  std::vector<Sample> out;
  out.reserve(p.num_identities * p.images_per_identity);
  for (std::size_t id = 0; id < p.num_identities; ++id)
    for (std::size_t k = 0; k < p.images_per_identity; ++k) {
      auto rng = derive_rng(p.seed, {kTagSample, id, k});
      Sample s;
      s.identity = id;
      s.domain = p.domain;
      s.attributes = records[id];
      s.camera = uniform_index(rng, p.num_cameras);
      s.bbox = draw_bbox(p.height, p.width, build_aspects()[records[id].build], rng);
      s.image = render(records[id], s.camera, s.bbox, p.height, p.width, rng);
      s.caption = render_caption(records[id]);
      out.push_back(std::move(s));
    }
  return out;
}

std::vector<Sample> generate_dataset(std::size_t num_identities, std::size_t images_per_identity,
                                     std::size_t num_cameras, std::uint64_t seed) {
  DatasetParams p;
  p.num_identities = num_identities;
  p.images_per_identity = images_per_identity;
  p.num_cameras = num_cameras;
  p.seed = seed;
  return generate_dataset(p);
}

// ---- PK sampling -----------------------------------------------------------

PKSampler::PKSampler(const std::vector<Sample>& samples, std::size_t P, std::size_t K,
                     std::uint64_t seed)
    : P_(P), K_(K), seed_(seed) {
  if (P == 0 || K == 0) throw ConfigError("PK sampling needs P >= 1 and K >= 1");
  for (std::size_t i = 0; i < samples.size(); ++i) by_identity_[samples[i].identity].push_back(i);
  for (const auto& [id, idx] : by_identity_)
    if (idx.size() >= K) identities_.push_back(id);
  if (identities_.size() < P)
    throw ConfigError("PK sampling needs P=" + std::to_string(P) + " identities with at least K=" +
                      std::to_string(K) + " samples each, found only " +
                      std::to_string(identities_.size()) + " (short by " +
                      std::to_string(P - identities_.size()) + ")");
  per_epoch_ = (identities_.size() + P - 1) / P;
}

std::vector<PKBatch> PKSampler::epoch(std::size_t epoch_index) const {
  auto rng = derive_rng(seed_, {kTagEpoch, epoch_index});
  auto order = identities_;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<PKBatch> batches;
  for (std::size_t start = 0; start < order.size(); start += P_) {
    std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + P_)));
    if (ids.size() < P_) {
      std::vector<std::size_t> rest;
      for (auto id : identities_)
        if (std::find(ids.begin(), ids.end(), id) == ids.end()) rest.push_back(id);
      auto extra = sample_without_replacement(rest, P_ - ids.size(), rng);
      ids.insert(ids.end(), extra.begin(), extra.end());
    }
    PKBatch b;
    for (auto id : ids) {
      auto pick = sample_without_replacement(by_identity_.at(id), K_, rng);
      b.indices.insert(b.indices.end(), pick.begin(), pick.end());
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

PKBatch PKSampler::batch(std::size_t step) {
  const std::size_t e = step / per_epoch_;
  if (e != cached_epoch_) {
    cache_ = epoch(e);
    cached_epoch_ = e;
  }
  return cache_[step % per_epoch_];
}

std::vector<PKBatch> pk_batches(const std::vector<Sample>& samples, std::size_t P, std::size_t K,
                                std::uint64_t seed) {
  return PKSampler(samples, P, K, seed).epoch(0);
}

// ---- split -----------------------------------------------------------------

DatasetSplit split_dataset(const std::vector<Sample>& samples, std::size_t num_train_identities) {
  DatasetSplit split;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.identity < num_train_identities) {
      split.train.push_back(i);
    } else if (seen.insert({s.identity, s.camera}).second) {
      split.query.push_back(i);
    } else {
      split.gallery.push_back(i);
    }
  }
  return split;
}

// ---- IO --------------------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<char> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<char>(static_cast<unsigned char>(
        std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (next_token(in) != "P6") throw DataError(path.string() + " is not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token(in));
    h = std::stoul(next_token(in));
    maxval = std::stoul(next_token(in));
  } catch (const std::exception&) {
    throw DataError("malformed PPM header in " + path.string());
  }
  if (maxval != 255 || w == 0 || h == 0) throw DataError("unsupported PPM header in " + path.string());
  std::vector<unsigned char> bytes(w * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw DataError("truncated PPM data in " + path.string());
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
  return img;
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<std::uint8_t>& gray) {
  if (gray.size() != height * width) throw UsageError("write_pgm: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

namespace {

std::string image_name(std::size_t i) {
  std::ostringstream os;
  os << "img_" << std::setw(6) << std::setfill('0') << i << ".ppm";
  return os.str();
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest;
  manifest["format"] = "mmet-dataset";
  manifest["version"] = 1;
  auto& list = manifest["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto file = image_name(i);
    write_ppm(dir / file, s.image);
    list.push_back({
        {"file", file},
        {"caption", s.caption},
        {"identity", s.identity},
        {"camera", s.camera},
        {"bbox", {s.bbox.top, s.bbox.left, s.bbox.height, s.bbox.width}},
        {"domain", s.domain},
        {"attributes",
         {{"shirt", s.attributes.shirt},
          {"pants", s.attributes.pants},
          {"background", s.attributes.background},
          {"build", s.attributes.build}}},
    });
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(1) << '\n';
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir.string());
  std::vector<Sample> samples;
  try {
    auto manifest = nlohmann::json::parse(in);
    if (manifest.at("format") != "mmet-dataset" || manifest.at("version") != 1)
      throw DataError("unsupported manifest format in " + dir.string());
    for (const auto& e : manifest.at("samples")) {
      Sample s;
      s.image = read_ppm(dir / e.at("file").get<std::string>());
      s.caption = e.at("caption").get<std::string>();
      s.identity = e.at("identity").get<std::size_t>();
      s.camera = e.at("camera").get<std::size_t>();
      const auto& b = e.at("bbox");
      s.bbox = {b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(),
                b.at(2).get<std::size_t>(), b.at(3).get<std::size_t>()};
      s.domain = e.at("domain").get<std::size_t>();
      if (e.contains("attributes")) {
        const auto& a = e["attributes"];
        s.attributes = {a.at("shirt").get<std::size_t>(), a.at("pants").get<std::size_t>(),
                        a.at("background").get<std::size_t>(), a.at("build").get<std::size_t>()};
      }
      if (s.bbox.top + s.bbox.height > s.image.height || s.bbox.left + s.bbox.width > s.image.width)
        throw DataError("bbox outside image for " + e.at("file").get<std::string>());
      samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return samples;
}

}  // namespace mmet
