#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmet/dataset.hpp"
#include "mmet/model.hpp"
#include "mmet/retrieval.hpp"
#include "mmet/training.hpp"

namespace mmet {

struct EvalConfig {
  // Identities below this index are training identities and are left out of
  // query and gallery.
  std::size_t train_identities = 0;
  FeaturePath feature_path = FeaturePath::ClsI;
  std::size_t max_rank = 10;
};

struct GradCamConfig {
  std::optional<std::size_t> block;  // default: last image-encoder block
  double min_overlap = 0.5;          // patch-in-box threshold for the localization summary
};

// Baseline / random-masking / region-masking comparison. For seed offset s,
// every base seed below (data, pretraining, finetuning) is shifted by s.
struct AblationConfig {
  DatasetParams dataset{30, 8, 4, 0, 64, 32, 0};
  DatasetParams pretrain_dataset{40, 8, 4, 1000, 64, 32, 1};
  std::size_t train_identities = 20;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  TrainConfig pretrain;
  TrainConfig finetune;

  AblationConfig();
};

/// Complete description of a run; serialized verbatim into the run directory.
struct RunConfig {
  DatasetParams dataset;
  ModelConfig model;  // vocab_size and num_classes are filled in from the data
  std::size_t text_length = 8;
  TrainConfig pretrain;
  TrainConfig finetune;
  EvalConfig eval;
  GradCamConfig gradcam;
  AblationConfig ablation;

  RunConfig();
  // Everything that can be checked without data.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
// Unknown keys, wrong types and bad enum names raise ConfigError naming the path.
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& config);
nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" to a config document. The value is parsed as JSON
/// when possible and taken as a string otherwise; the path must exist.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the file (if any) merged over them, then the overrides.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace mmet
