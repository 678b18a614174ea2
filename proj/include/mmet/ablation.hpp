#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mmet/config.hpp"

namespace mmet {

struct AblationScore {
  double mAP = 0.0;
  double rank1 = 0.0;
  double rank5 = 0.0;
};

struct AblationRow {
  std::string variant;
  std::vector<AblationScore> per_seed;
  AblationScore median;
};

/// Rows: "Baseline" (finetune from scratch), "Random masking" and
/// "Region MMM" (pretrain with that image-masking strategy, then finetune).
/// `untrained` scores the finetune model's initial weights.
struct AblationReport {
  std::vector<std::uint64_t> seeds;
  AblationRow untrained;
  std::vector<AblationRow> rows;
};

using ProgressFn = std::function<void(const std::string&)>;

AblationReport run_ablation(const RunConfig& config, const ProgressFn& progress = {});

// variant,mAP,rank1,rank5 with median values, one row per variant.
void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report);
// seed,variant,mAP,rank1,rank5 for every seed, untrained included.
void write_ablation_seeds_csv(const std::filesystem::path& path, const AblationReport& report);

double median(std::vector<double> values);

}  // namespace mmet
