#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mmet/dataset.hpp"
#include "mmet/model.hpp"

namespace mmet {

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // rows x dim
  std::vector<std::size_t> identities;
  std::vector<std::size_t> cameras;

  const double* row(std::size_t i) const { return values.data() + i * dim; }
};

// ClsI: image-encoder CLS state. ClsMEmptyText: fused CLS state with a
// caption holding only CLS_T and padding.
enum class FeaturePath { ClsI, ClsMEmptyText };

/// L2-normalized features, one row per sample, computed in chunks.
FeatureMatrix extract_features(const Model& model, const std::vector<Sample>& samples,
                               std::span<const std::size_t> indices,
                               FeaturePath path = FeaturePath::ClsI, std::size_t text_length = 8,
                               std::size_t chunk = 64);

struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t q, std::size_t g) const { return values[q * cols + g]; }
};

// Euclidean distances between query and gallery rows.
DistanceMatrix distance_matrix(const FeatureMatrix& query, const FeatureMatrix& gallery);

struct EvalResult {
  double mAP = 0.0;
  std::vector<double> cmc;  // cmc[k]: share of queries matched within the top k+1
  std::vector<std::optional<double>> ap;  // per query; empty when skipped
  std::size_t valid_queries = 0;
};

/// Gallery entries sharing identity and camera with the query are ignored;
/// the remaining same-identity entries are matches. Ties in distance keep
/// gallery order. Queries without any match are skipped; if every query is
/// skipped, EvaluationError.
EvalResult evaluate(const DistanceMatrix& dist, std::span<const std::size_t> query_ids,
                    std::span<const std::size_t> query_cams,
                    std::span<const std::size_t> gallery_ids,
                    std::span<const std::size_t> gallery_cams, std::size_t max_rank = 10);

EvalResult evaluate(const DistanceMatrix& dist, const FeatureMatrix& query,
                    const FeatureMatrix& gallery, std::size_t max_rank = 10);

// Features for the split's query and gallery rows, then evaluate.
EvalResult evaluate_model(const Model& model, const std::vector<Sample>& samples,
                          const DatasetSplit& split, FeaturePath path = FeaturePath::ClsI,
                          std::size_t text_length = 8, std::size_t max_rank = 10);

void write_eval_json(const std::filesystem::path& path, const EvalResult& result);
void write_per_query_csv(const std::filesystem::path& path, const EvalResult& result,
                         std::span<const std::size_t> query_ids);

}  // namespace mmet
