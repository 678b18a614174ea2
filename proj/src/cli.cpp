#include "mmet/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "mmet/ablation.hpp"
#include "mmet/config.hpp"
#include "mmet/error.hpp"
#include "mmet/gradcam.hpp"

namespace mmet {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kCheckpointFile = "checkpoint.mmet";

struct Options {
  std::string command;
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string data;
  std::string init;
  std::string resume;
  std::string checkpoint;
  std::size_t stop_at = 0;
  bool has_stop_at = false;
  bool eval_after = false;
  std::vector<std::size_t> samples;
  std::size_t target_class = 0;
  bool has_target_class = false;
};

// Everything a checkpoint needs besides tensors to rebuild its model.
struct Bundle {
  std::string kind;
  ModelConfig model;
  text::Vocabulary vocab;
  std::map<std::size_t, std::size_t> labels;  // identity -> ID-head class
};

void store_bundle(Checkpoint& ck, const Bundle& b, const RunConfig& run) {
  ck.texts["mmet.kind"] = b.kind;
  ck.texts["mmet.model_config"] = to_json(b.model).dump();
  ck.texts["mmet.run_config"] = to_json(run).dump();
  std::vector<std::string> words(b.vocab.tokens().begin() + text::kNumReserved, b.vocab.tokens().end());
  ck.texts["mmet.vocab"] = json(words).dump();
  json labels = json::array();
  for (const auto& [id, cls] : b.labels) labels.push_back({id, cls});
  ck.texts["mmet.labels"] = labels.dump();
}

Bundle read_bundle(const Checkpoint& ck, const fs::path& path) {
  Bundle b;
  try {
    b.kind = ck.text("mmet.kind");
    b.model = model_config_from_json(json::parse(ck.text("mmet.model_config")));
    b.vocab = text::Vocabulary(json::parse(ck.text("mmet.vocab")).get<std::vector<std::string>>());
    for (const auto& pair : json::parse(ck.text("mmet.labels")))
      b.labels[pair.at(0).get<std::size_t>()] = pair.at(1).get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed run metadata (" + e.what() + ")");
  } catch (const Error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (b.model.vocab_size != b.vocab.size())
    throw DataError(path.string() + ": vocabulary does not match the model");
  return b;
}

Checkpoint load_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw DataError("checkpoint " + path + " does not exist");
  return Checkpoint::load(path);
}

fs::path run_dir(const Options& o) {
  if (!o.out.empty()) return o.out;
  const char* root = std::getenv("MMET_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / o.command;
}

fs::path make_run_dir(const Options& o, const RunConfig& config) {
  auto dir = run_dir(o);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  write_json(dir / "config.json", to_json(config));
  return dir;
}

std::vector<Sample> load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory " + dir + " does not exist");
  return load_dataset(dir);
}

std::size_t identity_count(const std::vector<Sample>& samples) {
  std::set<std::size_t> ids;
  for (const auto& s : samples) ids.insert(s.identity);
  return ids.size();
}

text::Vocabulary vocab_from(const std::vector<Sample>& samples) {
  std::vector<std::string> captions;
  for (const auto& s : samples) captions.push_back(s.caption);
  return text::build_vocab(captions);
}

// Keeps the rows of an earlier log that precede `step`, so a resumed run
// continues the same file.
std::vector<std::string> earlier_rows(const fs::path& log, std::size_t step) {
  std::vector<std::string> rows;
  std::ifstream in(log);
  std::string line;
  if (!in || !std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t s = 0;
    try {
      s = std::stoull(line.substr(0, line.find(',')));
    } catch (const std::exception&) {
      throw DataError("malformed row in " + log.string());
    }
    if (s < step) rows.push_back(line);
  }
  return rows;
}

json report_json(const LossReport& r, std::size_t step) {
  json losses = json::object();
  for (const auto& [k, v] : r.values) losses[k] = v;
  return {{"step", step}, {"losses", losses}, {"total", r.total}};
}

std::size_t stop_step(const Options& o, const TrainConfig& t, std::size_t start) {
  const auto stop = o.has_stop_at ? o.stop_at : t.total_steps;
  if (stop > t.total_steps)
    throw ConfigError("--stop-at " + std::to_string(stop) + " exceeds total_steps " +
                      std::to_string(t.total_steps));
  if (stop < start)
    throw ConfigError("--stop-at " + std::to_string(stop) + " precedes the checkpoint step " +
                      std::to_string(start));
  return stop;
}

// Shared training driver for pretrain and finetune.
void run_training(const Options& o, const RunConfig& config, const TrainConfig& t,
                  TrainState& state, const TrainingData& data, const Bundle& bundle,
                  std::ostream& out, const std::function<void(const fs::path&)>& after = {}) {
  const auto stop = stop_step(o, t, state.step);
  if (t.mode == TrainMode::Pretrain && t.batch_size > data.samples.size())
    throw ConfigError("pretrain.batch_size " + std::to_string(t.batch_size) + " exceeds the " +
                      std::to_string(data.samples.size()) + " available samples");
  if (t.mode == TrainMode::Finetune) PKSampler(data.samples, t.P, t.K, t.seed);  // checks P, K

  const auto dir = make_run_dir(o, config);
  auto rows = o.resume.empty() ? std::vector<std::string>{} : earlier_rows(dir / "log.csv", state.step);
  std::ofstream log(dir / "log.csv");
  if (!log) throw DataError("cannot write " + (dir / "log.csv").string());
  log << LossReport::csv_header() << "\n";
  for (const auto& r : rows) log << r << "\n";

  LossReport last;
  std::size_t last_step = state.step;
  train(state, data, t, stop, [&](std::size_t step, double lr, const LossReport& r) {
    log << r.csv_row(step, lr) << "\n";
    last = r;
    last_step = step;
  });
  log.close();

  Checkpoint ck;
  save_train_state(ck, state);
  store_bundle(ck, bundle, config);
  ck.save(dir / kCheckpointFile);
  write_json(dir / "final_report.json", report_json(last, last_step));
  out << "trained to step " << state.step << " of " << t.total_steps;
  if (!last.values.empty()) out << ", last total loss " << last.total;
  out << "\nrun directory: " << dir.string() << "\n";
  if (after) after(dir);
}

int cmd_synth(const Options& o, const RunConfig& config, std::ostream& out) {
  const auto samples = generate_dataset(config.dataset);
  const auto dir = make_run_dir(o, config);
  save_dataset(dir / "dataset", samples);
  out << "wrote " << samples.size() << " samples to " << (dir / "dataset").string() << "\n";
  return kExitOk;
}

int cmd_pretrain(const Options& o, const RunConfig& config, std::ostream& out) {
  const auto samples = load_data(o.data);
  Bundle bundle;
  std::optional<TrainState> state;
  if (!o.resume.empty()) {
    auto ck = load_checkpoint(o.resume);
    bundle = read_bundle(ck, o.resume);
    if (bundle.kind != "pretrain") throw ConfigError("--resume needs a pretraining checkpoint");
    state.emplace(TrainState{Model(bundle.model, config.pretrain.seed), {}, 0, {}});
    load_train_state(ck, *state);
  } else {
    bundle.kind = "pretrain";
    bundle.vocab = vocab_from(samples);
    bundle.model = config.model;
    bundle.model.vocab_size = bundle.vocab.size();
    bundle.model.num_classes = 0;
    state.emplace(TrainState{Model(bundle.model, config.pretrain.seed), {}, 0, {}});
  }
  const auto data = make_training_data(samples, bundle.vocab, config.text_length);
  run_training(o, config, config.pretrain, *state, data, bundle, out);
  return kExitOk;
}

int cmd_finetune(const Options& o, const RunConfig& config, std::ostream& out) {
  const auto samples = load_data(o.data);
  const auto ids = identity_count(samples);
  const auto train_ids = config.eval.train_identities;
  if (o.eval_after && (train_ids == 0 || train_ids >= ids))
    throw ConfigError("--eval-after needs eval.train_identities between 1 and " +
                      std::to_string(ids - 1) + " so that some identities are held out");
  const auto split = split_dataset(samples, train_ids == 0 ? ids : train_ids);
  std::vector<Sample> train_samples;
  for (auto i : split.train) train_samples.push_back(samples[i]);

  Bundle bundle;
  bundle.kind = "finetune";
  std::optional<TrainState> state;
  std::optional<Checkpoint> resume_ck, init_ck;
  if (!o.resume.empty()) {
    resume_ck = load_checkpoint(o.resume);
    bundle = read_bundle(*resume_ck, o.resume);
    if (bundle.kind != "finetune") throw ConfigError("--resume needs a finetuning checkpoint");
  } else if (!o.init.empty()) {
    init_ck = load_checkpoint(o.init);
    auto init = read_bundle(*init_ck, o.init);
    bundle.vocab = init.vocab;
    bundle.model = init.model;
  } else {
    bundle.vocab = vocab_from(samples);
    bundle.model = config.model;
    bundle.model.vocab_size = bundle.vocab.size();
  }
  auto data = make_training_data(train_samples, bundle.vocab, config.text_length);
  if (resume_ck) {
    if (bundle.labels != data.label_of)
      throw ConfigError("--resume checkpoint was trained on different identities");
  } else {
    bundle.labels = data.label_of;
    bundle.model.num_classes = data.num_classes();
  }
  state.emplace(TrainState{Model(bundle.model, config.finetune.seed), {}, 0, {}});
  if (resume_ck) {
    load_train_state(*resume_ck, *state);
  } else if (init_ck) {
    Checkpoint params;
    for (const auto& [k, v] : init_ck->tensors)
      if (k.starts_with("param/") && !k.starts_with("param/head.id.")) params.tensors[k] = v;
    state->model.import_from(params, false);
  }

  run_training(o, config, config.finetune, *state, data, bundle, out, [&](const fs::path& dir) {
    if (!o.eval_after) return;
    auto r = evaluate_model(state->model, samples, split, config.eval.feature_path,
                            config.text_length, config.eval.max_rank);
    write_eval_json(dir / "eval.json", r);
    std::vector<std::size_t> qids;
    for (auto i : split.query) qids.push_back(samples[i].identity);
    write_per_query_csv(dir / "per_query.csv", r, qids);
    out << "held-out mAP " << r.mAP << ", rank-1 " << r.cmc[0] << "\n";
  });
  return kExitOk;
}

Model load_model(const std::string& path, Bundle& bundle) {
  auto ck = load_checkpoint(path);
  bundle = read_bundle(ck, path);
  Model model(bundle.model, 0);
  model.import_from(ck, true);
  return model;
}

int cmd_eval(const Options& o, const RunConfig& config, std::ostream& out) {
  Bundle bundle;
  auto model = load_model(o.checkpoint, bundle);
  const auto samples = load_data(o.data);
  const auto split = split_dataset(samples, config.eval.train_identities);
  if (split.query.empty() || split.gallery.empty())
    throw ConfigError("eval.train_identities leaves no query or gallery images");
  auto r = evaluate_model(model, samples, split, config.eval.feature_path, config.text_length,
                          config.eval.max_rank);
  const auto dir = make_run_dir(o, config);
  write_eval_json(dir / "eval.json", r);
  std::vector<std::size_t> qids;
  for (auto i : split.query) qids.push_back(samples[i].identity);
  write_per_query_csv(dir / "per_query.csv", r, qids);
  out << "mAP " << r.mAP << ", rank-1 " << r.cmc[0] << " over " << r.valid_queries << " queries\n";
  return kExitOk;
}

int cmd_gradcam(const Options& o, const RunConfig& config, std::ostream& out) {
  Bundle bundle;
  auto model = load_model(o.checkpoint, bundle);
  if (bundle.model.num_classes == 0) throw ConfigError("gradcam needs a finetuned checkpoint with an ID head");
  if (o.has_target_class && o.target_class >= bundle.model.num_classes)
    throw ConfigError("--class " + std::to_string(o.target_class) + " outside [0, " +
                      std::to_string(bundle.model.num_classes) + ")");
  if (config.gradcam.block && *config.gradcam.block >= bundle.model.image.depth)
    throw ConfigError("gradcam.block is beyond the checkpoint's image encoder depth");
  const auto samples = load_data(o.data);
  for (auto i : o.samples)
    if (i >= samples.size())
      throw ConfigError("sample " + std::to_string(i) + " outside the " +
                        std::to_string(samples.size()) + "-sample dataset");

  const auto dir = make_run_dir(o, config);
  std::ofstream summary(dir / "summary.csv");
  if (!summary) throw DataError("cannot write " + (dir / "summary.csv").string());
  summary.precision(17);
  summary << "sample,identity,target,source,inside,outside,focused\n";
  GradCamOptions opts;
  opts.block = config.gradcam.block;
  opts.text_length = config.text_length;
  for (auto i : o.samples) {
    const auto& s = samples[i];
    const auto grid = image::patchify(s.image, bundle.model.patch_size);
    std::size_t target = 0;
    std::string source;
    if (o.has_target_class) {
      target = o.target_class;
      source = "flag";
    } else if (auto it = bundle.labels.find(s.identity); it != bundle.labels.end()) {
      target = it->second;
      source = "identity";
    } else {
      target = predicted_class(model, grid, config.text_length);
      source = "predicted";
    }
    auto h = grad_cam(model, grid, target, opts);
    const auto stem = "sample_" + std::to_string(i);
    write_heatmap_pgm(dir / (stem + ".pgm"), h, s.image.height, s.image.width);
    write_overlay_ppm(dir / (stem + "_overlay.ppm"), h, s.image);
    write_heatmap_csv(dir / (stem + ".csv"), h);
    auto l = localization(h, grid, s.bbox, config.gradcam.min_overlap);
    summary << i << "," << s.identity << "," << target << "," << source << "," << l.inside << ","
            << l.outside << "," << (l.focused() ? 1 : 0) << "\n";
  }
  out << "wrote " << o.samples.size() << " heatmaps to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_ablate(const Options& o, const RunConfig& config, std::ostream& out) {
  const auto dir = make_run_dir(o, config);
  auto report = run_ablation(config, [&](const std::string& msg) { out << msg << "\n" << std::flush; });
  write_ablation_csv(dir / "ablation.csv", report);
  write_ablation_seeds_csv(dir / "ablation_seeds.csv", report);
  auto score = [](const AblationScore& x) {
    return json{{"mAP", x.mAP}, {"rank1", x.rank1}, {"rank5", x.rank5}};
  };
  auto row_json = [&](const AblationRow& row) {
    json seeds = json::array();
    for (const auto& x : row.per_seed) seeds.push_back(score(x));
    return json{{"variant", row.variant}, {"median", score(row.median)}, {"per_seed", seeds}};
  };
  json rows = json::array();
  for (const auto& row : report.rows) rows.push_back(row_json(row));
  write_json(dir / "ablation.json",
             {{"seeds", report.seeds}, {"untrained", row_json(report.untrained)}, {"rows", rows}});
  out << "median mAP: untrained " << report.untrained.median.mAP;
  for (const auto& row : report.rows) out << ", " << row.variant << " " << row.median.mAP;
  out << "\n";
  return kExitOk;
}

// Flag whose value becomes a config override at `path`.
void override_flag(CLI::App* sub, Options& o, const std::string& flag, const std::string& path,
                   const std::string& help, const std::string& type = "UINT") {
  sub->add_option_function<std::string>(
         flag, [&o, path](const std::string& v) { o.sets.push_back(path + "=" + v); }, help)
      ->type_name(type);
}

void common_options(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--set", o.sets, "Override a config field, e.g. --set finetune.lr=0.01");
  sub->add_option("--out", o.out, "Run directory (default $MMET_OUTPUT_ROOT/<command>)");
}

void training_options(CLI::App* sub, Options& o, const std::string& section) {
  sub->add_option("--data", o.data, "Dataset directory written by synth")->required();
  override_flag(sub, o, "--steps", section + ".total_steps", "Total optimizer steps");
  override_flag(sub, o, "--lr", section + ".lr", "Peak learning rate", "FLOAT");
  override_flag(sub, o, "--warmup", section + ".warmup_steps", "Linear warmup steps");
  override_flag(sub, o, "--seed", section + ".seed", "Training seed");
  override_flag(sub, o, "--optimizer", section + ".optimizer", "sgd or adam", "NAME");
  sub->add_option("--resume", o.resume, "Continue from a checkpoint of this command");
  auto* stop = sub->add_option("--stop-at", o.stop_at, "Stop after this many steps (for split runs)");
  stop->each([&o](const std::string&) { o.has_stop_at = true; });
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal person re-identification toolkit"};
  app.name("mmet");
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Render a synthetic person dataset");
  common_options(synth, o);
  override_flag(synth, o, "--ids", "dataset.num_identities", "Number of identities");
  override_flag(synth, o, "--images-per-id", "dataset.images_per_identity", "Images per identity");
  override_flag(synth, o, "--cameras", "dataset.num_cameras", "Number of cameras");
  override_flag(synth, o, "--seed", "dataset.seed", "Generator seed");

  auto* pretrain = app.add_subcommand("pretrain", "Masked multimodal pretraining");
  common_options(pretrain, o);
  training_options(pretrain, o, "pretrain");
  override_flag(pretrain, o, "--mask-strategy", "pretrain.mask_strategy", "random or region", "NAME");

  auto* finetune = app.add_subcommand("finetune", "ID + triplet finetuning");
  common_options(finetune, o);
  training_options(finetune, o, "finetune");
  finetune->add_option("--init", o.init, "Pretrained checkpoint to start from");
  finetune->add_flag("--eval-after", o.eval_after, "Evaluate on held-out identities afterwards");
  override_flag(finetune, o, "--train-identities", "eval.train_identities",
                "Identities used for training; the rest are held out");

  auto* eval = app.add_subcommand("eval", "Retrieval mAP / CMC on a dataset");
  common_options(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  eval->add_option("--data", o.data, "Dataset directory")->required();
  override_flag(eval, o, "--feature-path", "eval.feature_path", "cls_i or cls_m_empty_text", "NAME");
  override_flag(eval, o, "--train-identities", "eval.train_identities",
                "Identities below this index are excluded from query and gallery");

  auto* gradcam = app.add_subcommand("gradcam", "Grad-CAM heatmaps for chosen samples");
  common_options(gradcam, o);
  gradcam->add_option("--checkpoint", o.checkpoint, "Finetuned checkpoint")->required();
  gradcam->add_option("--data", o.data, "Dataset directory")->required();
  gradcam->add_option("--samples", o.samples, "Sample indices in manifest order")->required();
  gradcam->add_option("--class", o.target_class, "Target class for every sample")
      ->each([&o](const std::string&) { o.has_target_class = true; });

  auto* ablate = app.add_subcommand("ablate", "Baseline / random masking / region MMM comparison");
  common_options(ablate, o);
  ablate->add_option_function<std::vector<std::uint64_t>>(
      "--seeds",
      [&o](const std::vector<std::uint64_t>& seeds) {
        o.sets.push_back("ablation.seeds=" + json(seeds).dump());
      },
      "Seed offsets");

  std::vector<std::string> argv_store{"mmet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  o.command = app.get_subcommands().front()->get_name();

  try {
    std::optional<fs::path> file;
    if (!o.config.empty()) file = o.config;
    const auto config = load_run_config(file, o.sets);
    if (o.command == "synth") return cmd_synth(o, config, out);
    if (o.command == "pretrain") return cmd_pretrain(o, config, out);
    if (o.command == "finetune") return cmd_finetune(o, config, out);
    if (o.command == "eval") return cmd_eval(o, config, out);
    if (o.command == "gradcam") return cmd_gradcam(o, config, out);
    return cmd_ablate(o, config, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace mmet
