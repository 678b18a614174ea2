#include "mmet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mmet/error.hpp"

namespace mmet {

using nlohmann::json;

namespace {

template <class E>
struct EnumNames {
  std::vector<std::pair<E, const char*>> names;

  const char* name(E e) const {
    for (auto& [v, n] : names)
      if (v == e) return n;
    return "?";
  }
  E parse(const std::string& s, const std::string& path) const {
    for (auto& [v, n] : names)
      if (s == n) return v;
    std::string options;
    for (auto& [v, n] : names) options += std::string(options.empty() ? "" : ", ") + n;
    throw ConfigError(path + ": unknown value \"" + s + "\" (expected one of " + options + ")");
  }
};

const EnumNames<TrainMode> kModes{{{TrainMode::Pretrain, "pretrain"}, {TrainMode::Finetune, "finetune"}}};
const EnumNames<OptimizerKind> kOptimizers{{{OptimizerKind::Sgd, "sgd"}, {OptimizerKind::Adam, "adam"}}};
const EnumNames<image::MaskStrategy> kStrategies{
    {{image::MaskStrategy::Random, "random"}, {image::MaskStrategy::Region, "region"}}};
const EnumNames<TripletMining> kMining{
    {{TripletMining::BatchHard, "batch_hard"}, {TripletMining::Random, "random"}}};
const EnumNames<FeatureSource> kSources{{{FeatureSource::ClsM, "cls_m"}, {FeatureSource::ClsI, "cls_i"}}};
const EnumNames<FeaturePath> kPaths{
    {{FeaturePath::ClsI, "cls_i"}, {FeaturePath::ClsMEmptyText, "cls_m_empty_text"}}};

// Reads the fields of one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw ConfigError(at(key) + ": expected a nonnegative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(at(key) + ": expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(at(key) + ": expected true or false");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(at(key) + ": " + e.what());
    }
  }

  template <class E>
  void get_enum(const char* key, E& out, const EnumNames<E>& names) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) throw ConfigError(at(key) + ": expected a string");
    out = names.parse(j_.at(key).get<std::string>(), at(key));
  }

  // Nested object handled by `fn(const json&, path)`.
  template <class F>
  void nested(const char* key, F&& fn) {
    seen_.insert(key);
    if (j_.contains(key)) fn(j_.at(key), at(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(at(k.c_str()) + ": unknown key");
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json dataset_json(const DatasetParams& d) {
  return {{"num_identities", d.num_identities}, {"images_per_identity", d.images_per_identity},
          {"num_cameras", d.num_cameras},       {"seed", d.seed},
          {"height", d.height},                 {"width", d.width},
          {"domain", d.domain}};
}

void read_dataset(const json& j, const std::string& path, DatasetParams& d) {
  Reader r(j, path);
  r.get("num_identities", d.num_identities);
  r.get("images_per_identity", d.images_per_identity);
  r.get("num_cameras", d.num_cameras);
  r.get("seed", d.seed);
  r.get("height", d.height);
  r.get("width", d.width);
  r.get("domain", d.domain);
  r.finish();
}

json encoder_json(const EncoderConfig& e) {
  return {{"depth", e.depth},
          {"width", e.width},
          {"heads", e.heads},
          {"mlp_ratio", e.mlp_ratio},
          {"max_positions", e.max_positions}};
}

void read_encoder(const json& j, const std::string& path, EncoderConfig& e) {
  Reader r(j, path);
  r.get("depth", e.depth);
  r.get("width", e.width);
  r.get("heads", e.heads);
  r.get("mlp_ratio", e.mlp_ratio);
  r.get("max_positions", e.max_positions);
  r.finish();
}

void read_model(const json& j, const std::string& path, ModelConfig& m, bool with_sizes) {
  Reader r(j, path);
  r.nested("image", [&](const json& v, const std::string& p) { read_encoder(v, p, m.image); });
  r.nested("text", [&](const json& v, const std::string& p) { read_encoder(v, p, m.text); });
  r.nested("fusion", [&](const json& v, const std::string& p) { read_encoder(v, p, m.fusion); });
  r.get("patch_size", m.patch_size);
  if (with_sizes) {
    r.get("vocab_size", m.vocab_size);
    r.get("num_classes", m.num_classes);
  }
  r.finish();
}

json architecture_json(const ModelConfig& m) {
  return {{"image", encoder_json(m.image)},
          {"text", encoder_json(m.text)},
          {"fusion", encoder_json(m.fusion)},
          {"patch_size", m.patch_size}};
}

void read_train(const json& j, const std::string& path, TrainConfig& c) {
  Reader r(j, path);
  r.get_enum("mode", c.mode, kModes);
  r.get_enum("optimizer", c.optimizer, kOptimizers);
  r.get("lr", c.lr);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("warmup_steps", c.warmup_steps);
  r.get("total_steps", c.total_steps);
  r.get("batch_size", c.batch_size);
  r.get("P", c.P);
  r.get("K", c.K);
  r.get("image_mask_ratio", c.image_mask_ratio);
  r.get("text_mask_ratio", c.text_mask_ratio);
  r.get_enum("mask_strategy", c.mask_strategy, kStrategies);
  r.get("unimodal_on_paired", c.unimodal_on_paired);
  r.get("margin", c.margin);
  r.get_enum("mining", c.mining, kMining);
  r.get_enum("triplet_features", c.triplet_features, kSources);
  r.nested("weights", [&](const json& v, const std::string& p) {
    Reader w(v, p);
    for (const auto& name : loss_components()) {
      double x = c.weights.of(name);
      w.get(name.c_str(), x);
      c.weights.weights[name] = x;
    }
    w.finish();
  });
  r.get("seed", c.seed);
  r.finish();
}

TrainConfig pretrain_defaults() {
  TrainConfig c;
  c.mode = TrainMode::Pretrain;
  return c;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void validate_dataset(const DatasetParams& d, const std::string& path) {
  require(d.num_identities > 0 && d.images_per_identity > 0 && d.num_cameras > 0,
          path + ": identity, image and camera counts must be >= 1");
  require(d.height > 0 && d.width > 0, path + ": image size must be positive");
}

void validate_train(const TrainConfig& c, TrainMode expected, const std::string& path) {
  require(c.mode == expected,
          path + ".mode must be \"" + std::string(kModes.name(expected)) + "\" in this section");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void merge_into(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  for (const auto& [k, v] : patch.items()) {
    const auto p = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) throw ConfigError(p + ": unknown key");
    auto& slot = base[k];
    if (slot.is_object() && v.is_object())
      merge_into(slot, v, p);
    else
      slot = v;
  }
}

}  // namespace

AblationConfig::AblationConfig() {
  pretrain.mode = TrainMode::Pretrain;
  pretrain.optimizer = OptimizerKind::Adam;
  pretrain.total_steps = 300;
  pretrain.warmup_steps = 15;
  finetune.optimizer = OptimizerKind::Adam;
  finetune.mining = TripletMining::Random;
  finetune.triplet_features = FeatureSource::ClsI;
}

RunConfig::RunConfig() : pretrain(pretrain_defaults()) {}

void RunConfig::validate() const {
  validate_dataset(dataset, "dataset");
  validate_dataset(ablation.dataset, "ablation.dataset");
  validate_dataset(ablation.pretrain_dataset, "ablation.pretrain_dataset");
  require(text_length >= 2, "text_length must be >= 2");
  ModelConfig m = model;
  m.vocab_size = text::kNumReserved + 1;
  m.validate();
  require(dataset.height % model.patch_size == 0 && dataset.width % model.patch_size == 0,
          "dataset: image size " + std::to_string(dataset.height) + "x" +
              std::to_string(dataset.width) + " is not divisible by patch_size " +
              std::to_string(model.patch_size));
  const auto patches = (dataset.height / model.patch_size) * (dataset.width / model.patch_size);
  require(1 + patches <= model.image.max_positions,
          "model.image.max_positions " + std::to_string(model.image.max_positions) + " < 1 + " +
              std::to_string(patches) + " patches");
  require(text_length <= model.text.max_positions,
          "model.text.max_positions is smaller than text_length");
  require(1 + patches + text_length <= model.fusion.max_positions,
          "model.fusion.max_positions " + std::to_string(model.fusion.max_positions) + " < " +
              std::to_string(1 + patches + text_length));
  validate_train(pretrain, TrainMode::Pretrain, "pretrain");
  validate_train(finetune, TrainMode::Finetune, "finetune");
  validate_train(ablation.pretrain, TrainMode::Pretrain, "ablation.pretrain");
  validate_train(ablation.finetune, TrainMode::Finetune, "ablation.finetune");
  require(eval.max_rank >= 1, "eval.max_rank must be >= 1");
  require(gradcam.min_overlap > 0.0 && gradcam.min_overlap <= 1.0,
          "gradcam.min_overlap must lie in (0, 1]");
  if (gradcam.block)
    require(*gradcam.block < model.image.depth, "gradcam.block is beyond the image encoder depth");
  require(!ablation.seeds.empty(), "ablation.seeds must not be empty");
  require(ablation.train_identities >= 1 &&
              ablation.train_identities < ablation.dataset.num_identities,
          "ablation.train_identities must leave at least one held-out identity");
  for (const auto& d : {ablation.dataset, ablation.pretrain_dataset})
    require(d.height == dataset.height && d.width == dataset.width,
            "ablation datasets must share the main dataset's image size");
}

json to_json(const TrainConfig& c) {
  json weights;
  for (const auto& name : loss_components()) weights[name] = c.weights.of(name);
  return {{"mode", kModes.name(c.mode)},
          {"optimizer", kOptimizers.name(c.optimizer)},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"warmup_steps", c.warmup_steps},
          {"total_steps", c.total_steps},
          {"batch_size", c.batch_size},
          {"P", c.P},
          {"K", c.K},
          {"image_mask_ratio", c.image_mask_ratio},
          {"text_mask_ratio", c.text_mask_ratio},
          {"mask_strategy", kStrategies.name(c.mask_strategy)},
          {"unimodal_on_paired", c.unimodal_on_paired},
          {"margin", c.margin},
          {"mining", kMining.name(c.mining)},
          {"triplet_features", kSources.name(c.triplet_features)},
          {"weights", weights},
          {"seed", c.seed}};
}

json to_json(const ModelConfig& m) {
  auto j = architecture_json(m);
  j["vocab_size"] = m.vocab_size;
  j["num_classes"] = m.num_classes;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  read_model(j, "model", m, true);
  return m;
}

json to_json(const RunConfig& c) {
  return {{"dataset", dataset_json(c.dataset)},
          {"model", architecture_json(c.model)},
          {"text_length", c.text_length},
          {"pretrain", to_json(c.pretrain)},
          {"finetune", to_json(c.finetune)},
          {"eval",
           {{"train_identities", c.eval.train_identities},
            {"feature_path", kPaths.name(c.eval.feature_path)},
            {"max_rank", c.eval.max_rank}}},
          {"gradcam",
           {{"block", c.gradcam.block ? json(*c.gradcam.block) : json(nullptr)},
            {"min_overlap", c.gradcam.min_overlap}}},
          {"ablation",
           {{"dataset", dataset_json(c.ablation.dataset)},
            {"pretrain_dataset", dataset_json(c.ablation.pretrain_dataset)},
            {"train_identities", c.ablation.train_identities},
            {"seeds", c.ablation.seeds},
            {"pretrain", to_json(c.ablation.pretrain)},
            {"finetune", to_json(c.ablation.finetune)}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  r.nested("dataset", [&](const json& v, const std::string& p) { read_dataset(v, p, c.dataset); });
  r.nested("model", [&](const json& v, const std::string& p) { read_model(v, p, c.model, false); });
  r.get("text_length", c.text_length);
  r.nested("pretrain", [&](const json& v, const std::string& p) { read_train(v, p, c.pretrain); });
  r.nested("finetune", [&](const json& v, const std::string& p) { read_train(v, p, c.finetune); });
  r.nested("eval", [&](const json& v, const std::string& p) {
    Reader e(v, p);
    e.get("train_identities", c.eval.train_identities);
    e.get_enum("feature_path", c.eval.feature_path, kPaths);
    e.get("max_rank", c.eval.max_rank);
    e.finish();
  });
  r.nested("gradcam", [&](const json& v, const std::string& p) {
    Reader g(v, p);
    g.nested("block", [&](const json& b, const std::string& bp) {
      if (b.is_null()) {
        c.gradcam.block.reset();
      } else if (b.is_number_unsigned()) {
        c.gradcam.block = b.get<std::size_t>();
      } else {
        throw ConfigError(bp + ": expected a nonnegative integer or null");
      }
    });
    g.get("min_overlap", c.gradcam.min_overlap);
    g.finish();
  });
  r.nested("ablation", [&](const json& v, const std::string& p) {
    Reader a(v, p);
    a.nested("dataset", [&](const json& d, const std::string& dp) { read_dataset(d, dp, c.ablation.dataset); });
    a.nested("pretrain_dataset", [&](const json& d, const std::string& dp) {
      read_dataset(d, dp, c.ablation.pretrain_dataset);
    });
    a.get("train_identities", c.ablation.train_identities);
    a.nested("seeds", [&](const json& s, const std::string& sp) {
      if (!s.is_array()) throw ConfigError(sp + ": expected an array of seeds");
      c.ablation.seeds.clear();
      for (const auto& x : s) {
        if (!x.is_number_unsigned()) throw ConfigError(sp + ": seeds must be nonnegative integers");
        c.ablation.seeds.push_back(x.get<std::uint64_t>());
      }
    });
    a.nested("pretrain", [&](const json& t, const std::string& tp) { read_train(t, tp, c.ablation.pretrain); });
    a.nested("finetune", [&](const json& t, const std::string& tp) { read_train(t, tp, c.ablation.finetune); });
    a.finish();
  });
  r.finish();
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override \"" + assignment + "\" is not of the form key.path=value");
  const auto path = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json* slot = &doc;
  std::stringstream keys(path);
  std::string key;
  while (std::getline(keys, key, '.')) {
    if (!slot->is_object() || !slot->contains(key))
      throw ConfigError("override \"" + path + "\": unknown key");
    slot = &(*slot)[key];
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *slot = value;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides) {
  json doc = to_json(RunConfig{});
  if (file) {
    json patch;
    try {
      patch = read_json(*file);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    merge_into(doc, patch, "");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  auto config = run_config_from_json(doc);
  config.validate();
  return config;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw DataError("failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + " is not valid JSON");
  return j;
}

}  // namespace mmet
