#include "mmet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "mmet/error.hpp"
#include "mmet/ops.hpp"

namespace mmet {

namespace {

constexpr std::uint64_t kTagStep = 0x5157;
constexpr std::uint64_t kTagBatch = 0xBA7C;

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
  if (total_steps == 0) throw ConfigError("total_steps must be >= 1");
  if (warmup_steps > total_steps)
    throw ConfigError("warmup_steps (" + std::to_string(warmup_steps) + ") exceeds total_steps (" +
                      std::to_string(total_steps) + ")");
  if (P == 0 || K == 0) throw ConfigError("P and K must be >= 1");
  if (mode == TrainMode::Finetune && (P < 2 || K < 2))
    throw ConfigError("finetuning needs P >= 2 and K >= 2 for triplet mining");
  if (mode == TrainMode::Pretrain && batch_size < 2)
    throw ConfigError("pretraining batch_size must be >= 2");
  for (double r : {image_mask_ratio, text_mask_ratio})
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("mask ratios must lie in (0, 1)");
  if (margin < 0.0) throw ConfigError("margin must be nonnegative");
}

double lr_at(std::size_t step, const TrainConfig& c) {
  step = std::min(step, c.total_steps);
  if (step < c.warmup_steps)
    return c.lr * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  if (c.total_steps == c.warmup_steps) return c.lr;
  const double t = static_cast<double>(step - c.warmup_steps) /
                   static_cast<double>(c.total_steps - c.warmup_steps);
  return 0.5 * c.lr * (1.0 + std::cos(std::numbers::pi * t));
}

void optimizer_step(const Model& model, OptimizerState& state,
                    const std::vector<std::string>& group, double lr, const TrainConfig& c) {
  for (const auto& name : group)
    if (!model.param(name).has_grad())
      throw IntegrityError("parameter " + name + " has no gradient for this update");
  for (const auto& name : group) {
    Tensor p = model.param(name);
    auto data = p.mutable_data();
    auto grad = p.grad();
    auto& v = state.velocity[name];
    if (v.empty()) v.assign(data.size(), 0.0);
    if (c.optimizer == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] -= lr * c.weight_decay * data[i];
        v[i] = c.momentum * v[i] + grad[i];
        data[i] -= lr * v[i];
      }
      continue;
    }
    auto& s = state.second[name];
    if (s.empty()) s.assign(data.size(), 0.0);
    const auto t = ++state.updates[name];
    const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] -= lr * c.weight_decay * data[i];
      v[i] = c.adam_beta1 * v[i] + (1.0 - c.adam_beta1) * grad[i];
      s[i] = c.adam_beta2 * s[i] + (1.0 - c.adam_beta2) * grad[i] * grad[i];
      data[i] -= lr * (v[i] / bc1) / (std::sqrt(s[i] / bc2) + c.adam_eps);
    }
  }
}

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices,
                 const text::Vocabulary& vocab, std::size_t patch_size, std::size_t text_length,
                 Modality modality, const std::map<std::size_t, std::size_t>* label_of) {
  Batch b;
  for (auto i : indices) {
    if (i >= samples.size()) throw UsageError("make_batch: sample index out of range");
    const auto& s = samples[i];
    if (modality != Modality::TextOnly) {
      b.grids.push_back(image::patchify(s.image, patch_size));
      b.boxes.push_back(s.bbox);
    }
    if (modality != Modality::ImageOnly) b.texts.push_back(text::encode(s.caption, vocab, text_length));
    b.identities.push_back(s.identity);
    if (label_of) {
      auto it = label_of->find(s.identity);
      if (it == label_of->end())
        throw UsageError("make_batch: identity " + std::to_string(s.identity) + " has no class");
      b.labels.push_back(it->second);
    }
  }
  return b;
}

std::vector<std::string> parameter_group(const Model& model, const LossTerms& terms,
                                         bool image_masked, FeatureSource triplet_features) {
  std::set<std::string> prefixes;
  bool image_used = false;
  auto use_image = [&] {
    prefixes.insert("image.");
    image_used = true;
  };
  if (terms.has("mim")) {
    use_image();
    prefixes.insert("head.mim.");
  }
  if (terms.has("mlm")) prefixes.insert({"text.", "head.mlm."});
  for (const char* fused : {"mmm_image", "mmm_text", "itm", "id"})
    if (terms.has(fused)) {
      use_image();
      prefixes.insert({"text.", "fusion."});
    }
  if (terms.has("mmm_image")) prefixes.insert("head.mmm_image.");
  if (terms.has("mmm_text")) prefixes.insert("head.mmm_text.");
  if (terms.has("itm")) prefixes.insert("head.itm.");
  if (terms.has("id")) prefixes.insert("head.id.");
  if (terms.has("triplet")) {
    use_image();
    if (triplet_features == FeatureSource::ClsM) prefixes.insert({"text.", "fusion."});
  }

  std::vector<std::string> group;
  for (const auto& name : model.parameter_names()) {
    if (name == "image.mask" && !(image_used && image_masked)) continue;
    for (const auto& p : prefixes)
      if (name.starts_with(p)) {
        group.push_back(name);
        break;
      }
  }
  return group;
}

namespace {

// Backward, reachability audit, update.
LossReport finish_step(TrainState& state, const LossTerms& terms, bool image_masked,
                       const TrainConfig& config) {
  auto total = terms.total(config.weights);
  auto report = terms.report(total);
  backward(total);
  auto group = parameter_group(state.model, terms, image_masked, config.triplet_features);
  std::set<std::string> in_group(group.begin(), group.end());
  for (const auto& name : state.model.parameter_names())
    if (!in_group.count(name) && state.model.param(name).has_grad())
      throw IntegrityError("parameter " + name +
                           " received a gradient although no present loss can reach it");
  optimizer_step(state.model, state.optimizer, group, lr_at(state.step, config), config);
  state.model.clear_grads();
  ++state.step;
  state.history.push_back(report);
  return report;
}

std::size_t count_positions(const std::vector<image::ImageMaskPlan>& plans) {
  std::size_t n = 0;
  for (const auto& p : plans) n += p.size();
  return n;
}

std::size_t count_positions(const std::vector<text::TextMaskPlan>& plans) {
  std::size_t n = 0;
  for (const auto& p : plans) n += p.size();
  return n;
}

}  // namespace

Modality pretrain_modality(std::size_t step) {
  switch (step % 3) {
    case 0:
      return Modality::ImageOnly;
    case 1:
      return Modality::TextOnly;
    default:
      return Modality::Paired;
  }
}

LossReport pretrain_step(TrainState& state, const Batch& batch, Modality modality,
                         const TrainConfig& config) {
  const bool has_images = !batch.grids.empty(), has_texts = !batch.texts.empty();
  const bool ok = (modality == Modality::ImageOnly && has_images && !has_texts) ||
                  (modality == Modality::TextOnly && has_texts && !has_images) ||
                  (modality == Modality::Paired && has_images && has_texts &&
                   batch.grids.size() == batch.texts.size());
  if (!ok) throw UsageError("pretrain_step: batch contents do not match the declared modality");
  if (batch.boxes.size() != batch.grids.size())
    throw UsageError("pretrain_step: one box per image is required");

  auto rng = derive_rng(config.seed, {kTagStep, state.step});
  const auto& model = state.model;
  model.clear_grads();

  std::vector<image::ImageMaskPlan> image_plans;
  for (std::size_t i = 0; i < batch.grids.size(); ++i)
    image_plans.push_back(image::make_mask_plan(config.mask_strategy, batch.grids[i],
                                                batch.boxes[i], config.image_mask_ratio, rng));
  const bool image_masked = count_positions(image_plans) > 0;

  LossTerms terms;
  if (modality == Modality::ImageOnly) {
    auto enc = encode_image(model, batch.grids, image_plans);
    if (auto l = mim_loss(model, enc, image_plans))
      terms.add("mim", *l, count_positions(image_plans));
  } else if (modality == Modality::TextOnly) {
    std::vector<text::TokenSequence> seqs;
    std::vector<text::TextMaskPlan> plans;
    for (const auto& s : batch.texts) {
      auto m = text::mask_tokens(s, config.text_mask_ratio, model.config().vocab_size, rng);
      seqs.push_back(std::move(m.sequence));
      plans.push_back(std::move(m.plan));
    }
    auto enc = encode_text(model, seqs);
    if (auto l = mlm_loss(model, enc, plans)) terms.add("mlm", *l, count_positions(plans));
  } else {
    auto pairs = make_itm_pairs(batch.identities, rng);
    std::vector<text::TokenSequence> seqs;
    std::vector<text::TextMaskPlan> plans;
    for (auto c : pairs.caption_index) {
      auto m = text::mask_tokens(batch.texts[c], config.text_mask_ratio,
                                 model.config().vocab_size, rng);
      seqs.push_back(std::move(m.sequence));
      plans.push_back(std::move(m.plan));
    }
    auto img = encode_image(model, batch.grids, image_plans);
    auto txt = encode_text(model, seqs);
    auto fused = fuse(model, img, txt);

    // Reconstruction is only meaningful where image and caption belong together.
    std::vector<image::ImageMaskPlan> matched_image(batch.size());
    std::vector<text::TextMaskPlan> matched_text(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (pairs.labels[i] == 1) {
        matched_image[i] = image_plans[i];
        matched_text[i] = plans[i];
      }
    auto mmm = mmm_loss(model, fused, matched_image, matched_text);
    if (mmm.image) terms.add("mmm_image", *mmm.image, count_positions(matched_image));
    if (mmm.text) terms.add("mmm_text", *mmm.text, count_positions(matched_text));
    terms.add("itm", itm_loss(model, fused, pairs.labels), batch.size());
    if (config.unimodal_on_paired) {
      if (auto l = mim_loss(model, img, image_plans))
        terms.add("mim", *l, count_positions(image_plans));
      if (auto l = mlm_loss(model, txt, plans)) terms.add("mlm", *l, count_positions(plans));
    }
  }

  if (terms.empty()) {
    // Nothing was masked anywhere in the batch: no update, but the step counts.
    ++state.step;
    LossReport empty;
    state.history.push_back(empty);
    return empty;
  }
  return finish_step(state, terms, image_masked, config);
}

LossReport finetune_step(TrainState& state, const Batch& batch, const TrainConfig& config) {
  const auto& model = state.model;
  if (model.config().num_classes == 0) throw UsageError("finetune_step: model has no ID head");
  if (batch.grids.empty() || batch.texts.size() != batch.grids.size() ||
      batch.labels.size() != batch.grids.size())
    throw UsageError("finetune_step: batch needs an image, caption and label per sample");
  auto rng = derive_rng(config.seed, {kTagStep, state.step});
  model.clear_grads();

  auto img = encode_image(model, batch.grids);
  auto fused = fuse(model, img, encode_text(model, batch.texts));
  auto cls_m = fused.h_cls();
  auto logits = ops::linear(cls_m, model.param("head.id.w"), model.param("head.id.b"));
  auto features = config.triplet_features == FeatureSource::ClsM ? cls_m : img.h_cls();

  LossTerms terms;
  terms.add("id", id_loss(logits, batch.labels), batch.size());
  terms.add("triplet", triplet_loss(features, batch.labels, config.margin, config.mining, &rng),
            batch.size());
  return finish_step(state, terms, false, config);
}

TrainingData make_training_data(std::vector<Sample> samples, text::Vocabulary vocab,
                                std::size_t text_length) {
  TrainingData d;
  std::set<std::size_t> ids;
  for (const auto& s : samples) ids.insert(s.identity);
  std::size_t k = 0;
  for (auto id : ids) d.label_of[id] = k++;
  d.samples = std::move(samples);
  d.vocab = std::move(vocab);
  d.text_length = text_length;
  return d;
}

Batch batch_for_step(const TrainingData& data, const TrainConfig& config, std::size_t patch_size,
                     std::size_t step) {
  if (config.mode == TrainMode::Finetune) {
    PKSampler sampler(data.samples, config.P, config.K, config.seed);
    auto pk = sampler.batch(step);
    return make_batch(data.samples, pk.indices, data.vocab, patch_size, data.text_length,
                      Modality::Paired, &data.label_of);
  }
  if (config.batch_size > data.samples.size())
    throw ConfigError("pretraining batch_size " + std::to_string(config.batch_size) +
                      " exceeds the " + std::to_string(data.samples.size()) + " available samples");
  std::vector<std::size_t> all(data.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto rng = derive_rng(config.seed, {kTagBatch, step});
  auto picked = sample_without_replacement(all, config.batch_size, rng);
  return make_batch(data.samples, picked, data.vocab, patch_size, data.text_length,
                    pretrain_modality(step));
}

void train(TrainState& state, const TrainingData& data, const TrainConfig& config,
           std::size_t until, const StepCallback& on_step) {
  until = std::min(until, config.total_steps);
  const auto patch = state.model.config().patch_size;
  while (state.step < until) {
    const auto step = state.step;
    const double lr = lr_at(step, config);
    auto batch = batch_for_step(data, config, patch, step);
    auto report = config.mode == TrainMode::Finetune
                      ? finetune_step(state, batch, config)
                      : pretrain_step(state, batch, pretrain_modality(step), config);
    if (on_step) on_step(step, lr, report);
  }
}

void save_train_state(Checkpoint& ck, const TrainState& state) {
  state.model.export_to(ck);
  for (const auto& [name, v] : state.optimizer.velocity)
    ck.tensors["opt.velocity/" + name] = TensorBlock{{v.size()}, v};
  for (const auto& [name, v] : state.optimizer.second)
    ck.tensors["opt.second/" + name] = TensorBlock{{v.size()}, v};
  for (const auto& [name, n] : state.optimizer.updates)
    ck.texts["opt.updates/" + name] = std::to_string(n);
  ck.texts["train.step"] = std::to_string(state.step);
}

void load_train_state(const Checkpoint& ck, TrainState& state) {
  state.model.import_from(ck, true);
  state.optimizer = {};
  for (const auto& [key, block] : ck.tensors) {
    auto take = [&](const std::string& prefix, auto& dst) {
      if (!key.starts_with(prefix)) return;
      auto name = key.substr(prefix.size());
      if (!state.model.has(name) || block.values.size() != state.model.param(name).numel())
        throw DataError("checkpoint optimizer buffer " + key + " does not match the model");
      dst[name] = block.values;
    };
    take("opt.velocity/", state.optimizer.velocity);
    take("opt.second/", state.optimizer.second);
  }
  for (const auto& [key, value] : ck.texts)
    if (key.starts_with("opt.updates/"))
      state.optimizer.updates[key.substr(12)] = std::stoull(value);
  try {
    state.step = std::stoull(ck.text("train.step"));
  } catch (const std::invalid_argument&) {
    throw DataError("checkpoint has a malformed step counter");
  }
  state.history.clear();
}

}  // namespace mmet
