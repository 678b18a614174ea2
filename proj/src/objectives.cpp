#include "mmet/objectives.hpp"

#include <cstdio>

#include "mmet/error.hpp"
#include "mmet/ops.hpp"

namespace mmet {

using namespace ops;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::optional<double> LossReport::get(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) return std::nullopt;
  return it->second;
}

std::string LossReport::csv_header() {
  std::string h = "step,lr";
  for (const auto& n : loss_components()) h += "," + n;
  return h + ",total";
}

std::string LossReport::csv_row(std::size_t step, double lr) const {
  std::string row = std::to_string(step) + "," + fmt(lr);
  for (const auto& n : loss_components()) {
    row += ",";
    if (auto v = get(n)) row += fmt(*v);
  }
  return row + "," + fmt(total);
}

void LossTerms::add(const std::string& name, Tensor loss, std::size_t count) {
  if (has(name)) throw UsageError("loss component " + name + " added twice");
  terms_.push_back({name, std::move(loss), count});
}

bool LossTerms::has(const std::string& name) const {
  for (const auto& t : terms_)
    if (t.name == name) return true;
  return false;
}

Tensor LossTerms::total(const LossWeights& weights) const {
  if (terms_.empty()) throw UsageError("no loss component to sum");
  Tensor acc;
  for (const auto& t : terms_) {
    auto w = weights.of(t.name);
    auto term = w == 1.0 ? t.loss : scale(t.loss, w);
    acc = acc.defined() ? ops::add(acc, term) : term;
  }
  return acc;
}

LossReport LossTerms::report(const Tensor& total) const {
  LossReport r;
  for (const auto& t : terms_) {
    r.values[t.name] = t.loss.item();
    r.counts[t.name] = t.count;
  }
  r.total = total.item();
  return r;
}

Tensor id_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  return cross_entropy(logits, labels);
}

Tensor triplet_loss(const Tensor& features, std::span<const std::size_t> labels, double margin,
                    TripletMining mining, Rng* rng) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw UsageError("triplet_loss: expected one feature row per label");
  std::map<std::size_t, std::size_t> freq;
  for (auto l : labels) ++freq[l];
  for (const auto& [label, n] : freq)
    if (n < 2)
      throw UsageError("triplet_loss: label " + std::to_string(label) +
                       " appears once, so it has no positive");
  if (freq.size() < 2) throw UsageError("triplet_loss: the batch holds a single label");
  if (mining == TripletMining::Random && rng == nullptr)
    throw UsageError("triplet_loss: random mining needs a random stream");

  auto dist = pairwise_distance(features);
  const std::size_t B = labels.size();
  const auto d = dist.data();
  std::vector<std::size_t> anchors(B), pos(B), neg(B);
  for (std::size_t i = 0; i < B; ++i) {
    anchors[i] = i;
    std::vector<std::size_t> ps, ns;
    for (std::size_t j = 0; j < B; ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? ps : ns).push_back(j);
    }
    if (mining == TripletMining::Random) {
      pos[i] = ps[uniform_index(*rng, ps.size())];
      neg[i] = ns[uniform_index(*rng, ns.size())];
      continue;
    }
    pos[i] = ps[0];
    for (auto j : ps)
      if (d[i * B + j] > d[i * B + pos[i]]) pos[i] = j;
    neg[i] = ns[0];
    for (auto j : ns)
      if (d[i * B + j] < d[i * B + neg[i]]) neg[i] = j;
  }
  auto hinge = relu(add_scalar(
      sub(gather_elements(dist, anchors, pos), gather_elements(dist, anchors, neg)), margin));
  return mean(hinge);
}

Tensor total_finetune_loss(const Tensor& id, const Tensor& triplet) { return add(id, triplet); }

std::optional<Tensor> mim_loss(const Model& model, const ImageEncoding& enc,
                               std::span<const image::ImageMaskPlan> plans) {
  if (plans.size() != enc.batch) throw UsageError("mim_loss: one plan per image is required");
  const std::size_t S = enc.patches + 1;
  std::vector<std::size_t> rows;
  std::vector<double> targets;
  for (std::size_t b = 0; b < plans.size(); ++b) {
    for (auto p : plans[b].positions) rows.push_back(b * S + 1 + p);
    targets.insert(targets.end(), plans[b].targets.begin(), plans[b].targets.end());
  }
  if (rows.empty()) return std::nullopt;
  auto flat = reshape(enc.hidden, {enc.batch * S, enc.hidden.dim(2)});
  auto pred = linear(gather_rows(flat, rows), model.param("head.mim.w"), model.param("head.mim.b"));
  return mse(pred, targets);
}

std::optional<Tensor> mlm_loss(const Model& model, const TextEncoding& enc,
                               std::span<const text::TextMaskPlan> plans) {
  if (plans.size() != enc.batch) throw UsageError("mlm_loss: one plan per caption is required");
  std::vector<std::size_t> rows, labels;
  for (std::size_t b = 0; b < plans.size(); ++b)
    for (std::size_t k = 0; k < plans[b].size(); ++k) {
      rows.push_back(b * enc.length + plans[b].positions[k]);
      labels.push_back(plans[b].original_ids[k]);
    }
  if (rows.empty()) return std::nullopt;
  auto flat = reshape(enc.hidden, {enc.batch * enc.length, enc.hidden.dim(2)});
  auto logits =
      linear(gather_rows(flat, rows), model.param("head.mlm.w"), model.param("head.mlm.b"));
  return cross_entropy(logits, labels);
}

MmmLoss mmm_loss(const Model& model, const MultimodalEncoding& enc,
                 std::span<const image::ImageMaskPlan> image_plans,
                 std::span<const text::TextMaskPlan> text_plans) {
  if (image_plans.size() != enc.batch || text_plans.size() != enc.batch)
    throw UsageError("mmm_loss: one image plan and one text plan per pair are required");
  auto flat = reshape(enc.hidden, {enc.batch * enc.seq_len(), enc.hidden.dim(2)});
  MmmLoss out;

  std::vector<std::size_t> rows;
  std::vector<double> targets;
  for (std::size_t b = 0; b < enc.batch; ++b) {
    for (auto p : image_plans[b].positions) rows.push_back(enc.image_row(b, p));
    targets.insert(targets.end(), image_plans[b].targets.begin(), image_plans[b].targets.end());
  }
  if (!rows.empty())
    out.image = mse(linear(gather_rows(flat, rows), model.param("head.mmm_image.w"),
                           model.param("head.mmm_image.b")),
                    targets);

  rows.clear();
  std::vector<std::size_t> labels;
  for (std::size_t b = 0; b < enc.batch; ++b)
    for (std::size_t k = 0; k < text_plans[b].size(); ++k) {
      rows.push_back(enc.text_row(b, text_plans[b].positions[k]));
      labels.push_back(text_plans[b].original_ids[k]);
    }
  if (!rows.empty())
    out.text = cross_entropy(linear(gather_rows(flat, rows), model.param("head.mmm_text.w"),
                                    model.param("head.mmm_text.b")),
                             labels);
  return out;
}

Tensor itm_logits(const Model& model, const MultimodalEncoding& enc) {
  return linear(enc.h_cls(), model.param("head.itm.w"), model.param("head.itm.b"));
}

Tensor itm_loss(const Model& model, const MultimodalEncoding& enc,
                std::span<const std::size_t> match_labels) {
  if (match_labels.size() != enc.batch) throw UsageError("itm_loss: one label per pair");
  for (auto l : match_labels)
    if (l > 1) throw UsageError("itm_loss: match labels must be 0 or 1");
  return cross_entropy(itm_logits(model, enc), match_labels);
}

ItmPairs make_itm_pairs(std::span<const std::size_t> identities, Rng& rng) {
  const std::size_t B = identities.size();
  if (B < 2) throw UsageError("make_itm_pairs: need at least two pairs");
  ItmPairs pairs;
  for (std::size_t i = 0; i < B; ++i) {
    if (i % 2 == 0) {
      pairs.caption_index.push_back(i);
      pairs.labels.push_back(1);
      continue;
    }
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < B; ++j)
      if (identities[j] != identities[i]) others.push_back(j);
    if (others.empty())
      throw UsageError("make_itm_pairs: no caption of another identity for row " +
                       std::to_string(i));
    pairs.caption_index.push_back(others[uniform_index(rng, others.size())]);
    pairs.labels.push_back(0);
  }
  return pairs;
}

}  // namespace mmet
