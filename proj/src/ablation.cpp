#include "mmet/ablation.hpp"

#include <algorithm>
#include <fstream>
#include <optional>

#include "mmet/error.hpp"

namespace mmet {

namespace {

AblationScore score(const EvalResult& r) {
  return {r.mAP, r.cmc.at(0), r.cmc.size() >= 5 ? r.cmc[4] : r.cmc.back()};
}

void summarize(AblationRow& row) {
  std::vector<double> m, r1, r5;
  for (const auto& s : row.per_seed) {
    m.push_back(s.mAP);
    r1.push_back(s.rank1);
    r5.push_back(s.rank5);
  }
  row.median = {median(m), median(r1), median(r5)};
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) throw UsageError("median of an empty list");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

AblationReport run_ablation(const RunConfig& config, const ProgressFn& progress) {
  config.validate();
  const auto& a = config.ablation;
  AblationReport report;
  report.seeds = a.seeds;
  report.untrained.variant = "Untrained";
  report.rows = {{"Baseline", {}, {}}, {"Random masking", {}, {}}, {"Region MMM", {}, {}}};
  const std::optional<image::MaskStrategy> strategies[] = {
      std::nullopt, image::MaskStrategy::Random, image::MaskStrategy::Region};

  for (auto s : a.seeds) {
    auto data_params = a.dataset;
    data_params.seed += s;
    auto pre_params = a.pretrain_dataset;
    pre_params.seed += s;
    auto samples = generate_dataset(data_params);
    auto pre_samples = generate_dataset(pre_params);
    const auto split = split_dataset(samples, a.train_identities);

    std::vector<std::string> captions;
    for (const auto* set : {&samples, &pre_samples})
      for (const auto& x : *set) captions.push_back(x.caption);
    const auto vocab = text::build_vocab(captions);

    std::vector<Sample> train_samples;
    for (auto i : split.train) train_samples.push_back(samples[i]);
    const auto finetune_data = make_training_data(train_samples, vocab, config.text_length);
    const auto pretrain_data = make_training_data(pre_samples, vocab, config.text_length);

    ModelConfig pre_model = config.model;
    pre_model.vocab_size = vocab.size();
    pre_model.num_classes = 0;
    ModelConfig fine_model = pre_model;
    fine_model.num_classes = finetune_data.num_classes();

    auto ft = a.finetune;
    ft.seed += s;
    auto eval = [&](const Model& m) {
      return score(evaluate_model(m, samples, split, config.eval.feature_path, config.text_length,
                                  config.eval.max_rank));
    };
    report.untrained.per_seed.push_back(eval(Model(fine_model, ft.seed)));

    for (std::size_t v = 0; v < 3; ++v) {
      TrainState state{Model(fine_model, ft.seed)};
      if (strategies[v]) {
        auto pt = a.pretrain;
        pt.seed += s;
        pt.mask_strategy = *strategies[v];
        TrainState pre{Model(pre_model, pt.seed)};
        if (progress) progress("seed " + std::to_string(s) + ": pretraining (" + report.rows[v].variant + ")");
        train(pre, pretrain_data, pt, pt.total_steps);
        Checkpoint ck;
        pre.model.export_to(ck);
        state.model.import_from(ck, false);
      }
      if (progress) progress("seed " + std::to_string(s) + ": finetuning (" + report.rows[v].variant + ")");
      train(state, finetune_data, ft, ft.total_steps);
      report.rows[v].per_seed.push_back(eval(state.model));
    }
  }
  summarize(report.untrained);
  for (auto& row : report.rows) summarize(row);
  return report;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "variant,mAP,rank1,rank5\n";
  for (const auto& row : report.rows)
    out << row.variant << "," << row.median.mAP << "," << row.median.rank1 << ","
        << row.median.rank5 << "\n";
}

void write_ablation_seeds_csv(const std::filesystem::path& path, const AblationReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "seed,variant,mAP,rank1,rank5\n";
  for (std::size_t i = 0; i < report.seeds.size(); ++i) {
    auto line = [&](const AblationRow& row) {
      const auto& x = row.per_seed.at(i);
      out << report.seeds[i] << "," << row.variant << "," << x.mAP << "," << x.rank1 << ","
          << x.rank5 << "\n";
    };
    line(report.untrained);
    for (const auto& row : report.rows) line(row);
  }
}

}  // namespace mmet
