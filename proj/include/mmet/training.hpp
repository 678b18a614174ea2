#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmet/checkpoint.hpp"
#include "mmet/dataset.hpp"
#include "mmet/image.hpp"
#include "mmet/model.hpp"
#include "mmet/objectives.hpp"
#include "mmet/text.hpp"

namespace mmet {

enum class TrainMode { Pretrain, Finetune };
enum class OptimizerKind { Sgd, Adam };
enum class Modality { ImageOnly, TextOnly, Paired };
enum class FeatureSource { ClsM, ClsI };

struct TrainConfig {
  TrainMode mode = TrainMode::Finetune;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t warmup_steps = 10;
  std::size_t total_steps = 200;
  std::size_t batch_size = 32;  // pretraining batches
  std::size_t P = 16;
  std::size_t K = 4;
  double image_mask_ratio = 0.15;
  double text_mask_ratio = 0.15;
  image::MaskStrategy mask_strategy = image::MaskStrategy::Region;
  bool unimodal_on_paired = false;
  double margin = 0.3;
  TripletMining mining = TripletMining::BatchHard;
  FeatureSource triplet_features = FeatureSource::ClsM;
  LossWeights weights;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear warmup from 0, then cosine decay to 0 at total_steps. Steps past
/// the end return the final value.
double lr_at(std::size_t step, const TrainConfig& config);

struct OptimizerState {
  std::map<std::string, std::vector<double>> velocity;  // SGD momentum / Adam first moment
  std::map<std::string, std::vector<double>> second;    // Adam second moment
  std::map<std::string, std::size_t> updates;           // Adam bias-correction counts
};

/// Updates exactly the parameters in `group`. Each must hold a gradient;
/// a missing one raises IntegrityError naming it. SGD: decoupled weight decay
/// (p -= lr*wd*p), v = momentum*v + g, p -= lr*v. Adam: decoupled decay with
/// bias-corrected moments.
void optimizer_step(const Model& model, OptimizerState& state,
                    const std::vector<std::string>& group, double lr, const TrainConfig& config);

/// One step's worth of model inputs. Parts not used by the step's modality
/// stay empty.
struct Batch {
  std::vector<image::PatchGrid> grids;
  std::vector<BBox> boxes;
  std::vector<text::TokenSequence> texts;
  std::vector<std::size_t> identities;
  std::vector<std::size_t> labels;  // ID-head classes (finetuning)

  std::size_t size() const { return identities.size(); }
};

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                 const text::Vocabulary& vocab, std::size_t patch_size, std::size_t text_length,
                 Modality modality, const std::map<std::size_t, std::size_t>* label_of = nullptr);

struct TrainState {
  Model model;
  OptimizerState optimizer;
  std::size_t step = 0;
  std::vector<LossReport> history;
};

// Parameters that the present loss components can reach. Everything else
// must come out of backward without a gradient.
std::vector<std::string> parameter_group(const Model& model, const LossTerms& terms,
                                         bool image_masked, FeatureSource triplet_features);

LossReport pretrain_step(TrainState& state, const Batch& batch, Modality modality,
                         const TrainConfig& config);
LossReport finetune_step(TrainState& state, const Batch& batch, const TrainConfig& config);

Modality pretrain_modality(std::size_t step);

/// Samples and vocabulary a run draws its batches from.
struct TrainingData {
  std::vector<Sample> samples;
  text::Vocabulary vocab;
  std::size_t text_length = 8;
  std::map<std::size_t, std::size_t> label_of;  // identity -> ID-head class, ascending

  std::size_t num_classes() const { return label_of.size(); }
};

TrainingData make_training_data(std::vector<Sample> samples, text::Vocabulary vocab,
                                std::size_t text_length);

// Batch for a given step; depends only on (seed, step).
Batch batch_for_step(const TrainingData& data, const TrainConfig& config, std::size_t patch_size,
                     std::size_t step);

using StepCallback = std::function<void(std::size_t step, double lr, const LossReport&)>;

// Runs steps until state.step == until (or total_steps, whichever is lower).
void train(TrainState& state, const TrainingData& data, const TrainConfig& config,
           std::size_t until, const StepCallback& on_step = {});

void save_train_state(Checkpoint& ck, const TrainState& state);
// Model parameters (strict), optimizer buffers and step counter.
void load_train_state(const Checkpoint& ck, TrainState& state);

}  // namespace mmet
