#include "mmet/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "mmet/error.hpp"
#include "mmet/image.hpp"

namespace mmet {

FeatureMatrix extract_features(const Model& model, const std::vector<Sample>& samples,
                               std::span<const std::size_t> indices, FeaturePath path,
                               std::size_t text_length, std::size_t chunk) {
  if (chunk == 0) throw UsageError("extract_features: chunk must be positive");
  FeatureMatrix out;
  out.rows = indices.size();
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto end = std::min(indices.size(), start + chunk);
    std::vector<image::PatchGrid> grids;
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = samples.at(indices[i]);
      grids.push_back(image::patchify(s.image, model.config().patch_size));
      out.identities.push_back(s.identity);
      out.cameras.push_back(s.camera);
    }
    auto img = encode_image(model, grids);
    Tensor feats;
    if (path == FeaturePath::ClsI) {
      feats = img.h_cls();
    } else {
      std::vector<text::TokenSequence> texts(grids.size(), text::empty_caption(text_length));
      feats = fuse(model, img, encode_text(model, texts)).h_cls();
    }
    out.dim = feats.dim(1);
    const auto data = feats.data();
    for (std::size_t r = 0; r < feats.dim(0); ++r) {
      double norm = 0.0;
      for (std::size_t c = 0; c < out.dim; ++c) norm += data[r * out.dim + c] * data[r * out.dim + c];
      norm = std::sqrt(norm);
      if (norm == 0.0) throw NumericError("extract_features: zero feature vector");
      for (std::size_t c = 0; c < out.dim; ++c) out.values.push_back(data[r * out.dim + c] / norm);
    }
  }
  return out;
}

DistanceMatrix distance_matrix(const FeatureMatrix& query, const FeatureMatrix& gallery) {
  if (query.dim != gallery.dim)
    throw UsageError("distance_matrix: feature dimensions " + std::to_string(query.dim) + " and " +
                     std::to_string(gallery.dim) + " differ");
  DistanceMatrix d;
  d.rows = query.rows;
  d.cols = gallery.rows;
  d.values.resize(d.rows * d.cols);
  for (std::size_t q = 0; q < d.rows; ++q)
    for (std::size_t g = 0; g < d.cols; ++g) {
      double s = 0.0;
      for (std::size_t c = 0; c < query.dim; ++c) {
        const double diff = query.row(q)[c] - gallery.row(g)[c];
        s += diff * diff;
      }
      d.values[q * d.cols + g] = std::sqrt(s);
    }
  return d;
}

EvalResult evaluate(const DistanceMatrix& dist, std::span<const std::size_t> query_ids,
                    std::span<const std::size_t> query_cams,
                    std::span<const std::size_t> gallery_ids,
                    std::span<const std::size_t> gallery_cams, std::size_t max_rank) {
  if (query_ids.size() != dist.rows || query_cams.size() != dist.rows ||
      gallery_ids.size() != dist.cols || gallery_cams.size() != dist.cols)
    throw UsageError("evaluate: metadata does not match the distance matrix");
  if (max_rank == 0) throw UsageError("evaluate: max_rank must be positive");
  EvalResult r;
  r.cmc.assign(max_rank, 0.0);
  double ap_sum = 0.0;
  std::vector<std::size_t> order(dist.cols);
  for (std::size_t q = 0; q < dist.rows; ++q) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dist.at(q, a) < dist.at(q, b);
    });
    std::size_t rank = 0, hits = 0, first = 0;
    double precision_sum = 0.0;
    for (auto g : order) {
      const bool same_id = gallery_ids[g] == query_ids[q];
      if (same_id && gallery_cams[g] == query_cams[q]) continue;  // junk
      ++rank;
      if (!same_id) continue;
      ++hits;
      if (first == 0) first = rank;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
    if (hits == 0) {
      r.ap.emplace_back();
      continue;
    }
    const double ap = precision_sum / static_cast<double>(hits);
    r.ap.emplace_back(ap);
    ap_sum += ap;
    ++r.valid_queries;
    for (std::size_t k = first - 1; k < max_rank; ++k) r.cmc[k] += 1.0;
  }
  if (r.valid_queries == 0) throw EvaluationError("evaluate: no query has a valid match");
  const double n = static_cast<double>(r.valid_queries);
  r.mAP = ap_sum / n;
  for (auto& c : r.cmc) c /= n;
  return r;
}

EvalResult evaluate(const DistanceMatrix& dist, const FeatureMatrix& query,
                    const FeatureMatrix& gallery, std::size_t max_rank) {
  return evaluate(dist, query.identities, query.cameras, gallery.identities, gallery.cameras,
                  max_rank);
}

EvalResult evaluate_model(const Model& model, const std::vector<Sample>& samples,
                          const DatasetSplit& split, FeaturePath path, std::size_t text_length,
                          std::size_t max_rank) {
  if (split.query.empty() || split.gallery.empty())
    throw EvaluationError("evaluate_model: the split has no query or no gallery images");
  auto q = extract_features(model, samples, split.query, path, text_length);
  auto g = extract_features(model, samples, split.gallery, path, text_length);
  return evaluate(distance_matrix(q, g), q, g, max_rank);
}

void write_eval_json(const std::filesystem::path& path, const EvalResult& result) {
  nlohmann::json j;
  j["mAP"] = result.mAP;
  j["cmc"] = result.cmc;
  j["rank1"] = result.cmc.empty() ? 0.0 : result.cmc[0];
  j["rank5"] = result.cmc.size() < 5 ? result.cmc.back() : result.cmc[4];
  j["valid_queries"] = result.valid_queries;
  j["num_queries"] = result.ap.size();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_per_query_csv(const std::filesystem::path& path, const EvalResult& result,
                         std::span<const std::size_t> query_ids) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "query,identity,ap\n";
  out.precision(17);
  for (std::size_t q = 0; q < result.ap.size(); ++q) {
    out << q << "," << (q < query_ids.size() ? std::to_string(query_ids[q]) : "") << ",";
    if (result.ap[q]) out << *result.ap[q];
    out << "\n";
  }
}

}  // namespace mmet
