#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmet/image.hpp"
#include "mmet/model.hpp"
#include "mmet/rng.hpp"
#include "mmet/tensor.hpp"
#include "mmet/text.hpp"

namespace mmet {

// Component names in log-column order.
inline const std::vector<std::string>& loss_components() {
  static const std::vector<std::string> names{"id",       "triplet",  "mim", "mlm",
                                              "mmm_image", "mmm_text", "itm"};
  return names;
}

struct LossWeights {
  std::map<std::string, double> weights;  // missing names weigh 1

  double of(const std::string& name) const {
    auto it = weights.find(name);
    return it == weights.end() ? 1.0 : it->second;
  }
};

/// Values of the loss components present in one step. Components that were
/// not computed are absent, not zero.
struct LossReport {
  std::map<std::string, double> values;
  std::map<std::string, std::size_t> counts;
  double total = 0.0;

  bool has(const std::string& name) const { return values.count(name) != 0; }
  std::optional<double> get(const std::string& name) const;

  static std::string csv_header();
  std::string csv_row(std::size_t step, double lr) const;
  bool operator==(const LossReport&) const = default;
};

// Collects the differentiable components of one step.
class LossTerms {
 public:
  void add(const std::string& name, Tensor loss, std::size_t count);
  bool empty() const { return terms_.empty(); }
  bool has(const std::string& name) const;
  Tensor total(const LossWeights& weights) const;
  LossReport report(const Tensor& total) const;

 private:
  struct Term {
    std::string name;
    Tensor loss;
    std::size_t count;
  };
  std::vector<Term> terms_;
};

Tensor id_loss(const Tensor& logits, std::span<const std::size_t> labels);

enum class TripletMining { BatchHard, Random };

/// Mean over anchors of (d(a,p) - d(a,n) + margin)_+ with Euclidean distances.
/// Batch-hard picks the farthest positive and nearest negative per anchor;
/// random mining needs `rng`.
Tensor triplet_loss(const Tensor& features, std::span<const std::size_t> labels, double margin,
                    TripletMining mining = TripletMining::BatchHard, Rng* rng = nullptr);

Tensor total_finetune_loss(const Tensor& id, const Tensor& triplet);

// Per-sample plans; nullopt when no position is masked in the whole batch.
std::optional<Tensor> mim_loss(const Model& model, const ImageEncoding& enc,
                               std::span<const image::ImageMaskPlan> plans);
std::optional<Tensor> mlm_loss(const Model& model, const TextEncoding& enc,
                               std::span<const text::TextMaskPlan> plans);

struct MmmLoss {
  std::optional<Tensor> image;
  std::optional<Tensor> text;
};
MmmLoss mmm_loss(const Model& model, const MultimodalEncoding& enc,
                 std::span<const image::ImageMaskPlan> image_plans,
                 std::span<const text::TextMaskPlan> text_plans);

// Two-way classifier on h_cls_m; label 1 = matched pair.
Tensor itm_logits(const Model& model, const MultimodalEncoding& enc);
Tensor itm_loss(const Model& model, const MultimodalEncoding& enc,
                std::span<const std::size_t> match_labels);

struct ItmPairs {
  std::vector<std::size_t> caption_index;  // caption used for each image
  std::vector<std::size_t> labels;         // 1 matched, 0 mismatched
};

/// Even rows keep their own caption; odd rows take a caption of another
/// identity drawn uniformly from the batch.
ItmPairs make_itm_pairs(std::span<const std::size_t> identities, Rng& rng);

}  // namespace mmet
