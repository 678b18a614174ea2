#include "mmet/model.hpp"

#include <cmath>

#include "mmet/error.hpp"
#include "mmet/ops.hpp"
#include "mmet/rng.hpp"

namespace mmet {

using namespace ops;

void EncoderConfig::validate(const std::string& name) const {
  if (width == 0 || heads == 0 || mlp_ratio == 0 || max_positions == 0)
    throw ConfigError(name + " encoder: width, heads, mlp_ratio and max_positions must be >= 1");
  if (width % heads != 0)
    throw ConfigError(name + " encoder: width " + std::to_string(width) +
                      " is not divisible by heads " + std::to_string(heads));
}

void ModelConfig::validate() const {
  image.validate("image");
  text.validate("text");
  fusion.validate("fusion");
  if (patch_size == 0) throw ConfigError("patch_size must be >= 1");
  if (vocab_size <= text::kNumReserved)
    throw ConfigError("vocab_size must exceed the reserved token count");
}

namespace {

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

double truncated_normal(Rng& rng, double std) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (;;) {
    double z = nd(rng);
    if (std::abs(z) <= 2.0) return z * std;
  }
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& ic = config_.image;
  const auto& tc = config_.text;
  const auto& fc = config_.fusion;
  const std::size_t pd = config_.patch_dim();

  auto blocks = [this](const std::string& enc, const EncoderConfig& c) {
    const std::size_t d = c.width, h = c.width * c.mlp_ratio;
    for (std::size_t i = 0; i < c.depth; ++i) {
      const auto p = enc + ".blocks." + std::to_string(i);
      add(p + ".ln1.g", {d}, 'g');
      add(p + ".ln1.b", {d}, 'b');
      add(p + ".attn.qkv.w", {d, 3 * d}, 'w');
      add(p + ".attn.qkv.b", {3 * d}, 'b');
      add(p + ".attn.out.w", {d, d}, 'w');
      add(p + ".attn.out.b", {d}, 'b');
      add(p + ".ln2.g", {d}, 'g');
      add(p + ".ln2.b", {d}, 'b');
      add(p + ".mlp.fc1.w", {d, h}, 'w');
      add(p + ".mlp.fc1.b", {h}, 'b');
      add(p + ".mlp.fc2.w", {h, d}, 'w');
      add(p + ".mlp.fc2.b", {d}, 'b');
    }
    if (c.depth > 0) {
      add(enc + ".norm.g", {d}, 'g');
      add(enc + ".norm.b", {d}, 'b');
    }
  };

  add("image.patch.w", {pd, ic.width}, 'w');
  add("image.patch.b", {ic.width}, 'b');
  add("image.cls", {1, ic.width}, 'w');
  add("image.mask", {1, ic.width}, 'w');
  add("image.pos", {ic.max_positions, ic.width}, 'w');
  blocks("image", ic);

  add("text.token", {config_.vocab_size, tc.width}, 'w');
  add("text.pos", {tc.max_positions, tc.width}, 'w');
  blocks("text", tc);

  add("fusion.image_proj.w", {ic.width, fc.width}, 'w');
  add("fusion.image_proj.b", {fc.width}, 'b');
  add("fusion.text_proj.w", {tc.width, fc.width}, 'w');
  add("fusion.text_proj.b", {fc.width}, 'b');
  add("fusion.cls", {1, fc.width}, 'w');
  blocks("fusion", fc);

  auto head = [this](const std::string& name, std::size_t in, std::size_t out) {
    add("head." + name + ".w", {in, out}, 'w');
    add("head." + name + ".b", {out}, 'b');
  };
  head("mim", ic.width, pd);
  head("mlm", tc.width, config_.vocab_size);
  head("mmm_image", fc.width, pd);
  head("mmm_text", fc.width, config_.vocab_size);
  head("itm", fc.width, 2);
  if (config_.num_classes > 0) head("id", fc.width, config_.num_classes);

  for (const auto& n : names_) init(n, seed);
}

void Model::add(const std::string& name, Shape shape, char kind) {
  names_.push_back(name);
  params_.emplace(name, Tensor::zeros(std::move(shape), true));
  kinds_.emplace(name, kind);
}

void Model::init(const std::string& name, std::uint64_t seed) {
  auto data = params_.at(name).mutable_data();
  switch (kinds_.at(name)) {
    case 'g':
      std::fill(data.begin(), data.end(), 1.0);
      break;
    case 'b':
      std::fill(data.begin(), data.end(), 0.0);
      break;
    default: {
      auto rng = derive_rng(seed, {name_hash(name)});
      for (auto& v : data) v = truncated_normal(rng, 0.02);
    }
  }
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("model has no parameter " + name);
  return it->second;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void Model::clear_grads() const {
  for (const auto& [name, t] : params_) Tensor(t).clear_grad();
}

void Model::reinitialize(const std::string& prefix, std::uint64_t seed) {
  for (const auto& n : names_)
    if (n.starts_with(prefix)) init(n, seed);
}

void Model::export_to(Checkpoint& ck) const {
  for (const auto& n : names_) {
    const auto& t = params_.at(n);
    ck.tensors["param/" + n] = TensorBlock{t.shape(), {t.data().begin(), t.data().end()}};
  }
}

void Model::import_from(const Checkpoint& ck, bool strict, std::vector<std::string>* missing) {
  for (const auto& [key, block] : ck.tensors) {
    if (!key.starts_with("param/")) continue;
    const auto name = key.substr(6);
    auto it = params_.find(name);
    if (it == params_.end()) {
      if (strict) throw DataError("checkpoint parameter " + name + " is not part of the model");
      continue;
    }
    if (block.shape != it->second.shape())
      throw DataError("checkpoint parameter " + name + " has shape " + shape_str(block.shape) +
                      ", model expects " + shape_str(it->second.shape()));
  }
  for (const auto& n : names_) {
    auto it = ck.tensors.find("param/" + n);
    if (it == ck.tensors.end()) {
      if (strict) throw DataError("checkpoint lacks parameter " + n);
      if (missing) missing->push_back(n);
      continue;
    }
    auto dst = params_.at(n).mutable_data();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

namespace {

// Pre-norm transformer block on x[B, S, d].
Tensor transformer_block(const Model& m, const std::string& p, const EncoderConfig& c,
                         const Tensor& x, const std::vector<std::uint8_t>* key_valid,
                         std::vector<Tensor>& attention) {
  const std::size_t B = x.dim(0), S = x.dim(1), d = c.width, H = c.heads, dh = d / H;
  auto P = [&](const char* s) -> const Tensor& { return m.param(p + s); };

  auto h = layer_norm(x, P(".ln1.g"), P(".ln1.b"));
  auto qkv = linear(h, P(".attn.qkv.w"), P(".attn.qkv.b"));
  auto heads = [&](std::size_t part) {
    auto t = reshape(slice(qkv, 2, part * d, d), {B, S, H, dh});
    return reshape(permute(t, {0, 2, 1, 3}), {B * H, S, dh});
  };
  auto q = heads(0), k = heads(1), v = heads(2);
  auto scores = scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor probs;
  if (key_valid) {
    std::vector<std::uint8_t> valid(B * H * S);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t hh = 0; hh < H; ++hh)
        std::copy_n(key_valid->begin() + static_cast<std::ptrdiff_t>(b * S), S,
                    valid.begin() + static_cast<std::ptrdiff_t>((b * H + hh) * S));
    probs = masked_softmax(scores, valid);
  } else {
    probs = softmax(scores, 2);
  }
  attention.push_back(probs);
  auto ctx = reshape(bmm(probs, v), {B, H, S, dh});
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {B, S, d});
  auto y = add(x, linear(ctx, P(".attn.out.w"), P(".attn.out.b")));

  auto h2 = layer_norm(y, P(".ln2.g"), P(".ln2.b"));
  auto mlp = linear(gelu(linear(h2, P(".mlp.fc1.w"), P(".mlp.fc1.b"))), P(".mlp.fc2.w"),
                    P(".mlp.fc2.b"));
  return add(y, mlp);
}

struct StackOutput {
  Tensor hidden;
  Tensor last_block;
};

StackOutput run_stack(const Model& m, const std::string& enc, const EncoderConfig& c, Tensor x,
                      const std::vector<std::uint8_t>* key_valid, std::vector<Tensor>& attention,
                      std::vector<Tensor>* blocks = nullptr) {
  for (std::size_t i = 0; i < c.depth; ++i) {
    x = transformer_block(m, enc + ".blocks." + std::to_string(i), c, x, key_valid, attention);
    if (blocks) blocks->push_back(x);
  }
  if (c.depth == 0) return {x, x};
  return {layer_norm(x, m.param(enc + ".norm.g"), m.param(enc + ".norm.b")), x};
}

Tensor first_row(const Tensor& hidden) {
  return reshape(slice(hidden, 1, 0, 1), {hidden.dim(0), hidden.dim(2)});
}

}  // namespace

Tensor ImageEncoding::h_cls() const { return first_row(hidden); }
Tensor ImageEncoding::h_patches() const { return slice(hidden, 1, 1, patches); }
Tensor TextEncoding::h_cls() const { return first_row(hidden); }
Tensor MultimodalEncoding::h_cls() const { return first_row(hidden); }

ImageEncoding encode_image(const Model& model, std::span<const image::PatchGrid> grids,
                           std::span<const image::ImageMaskPlan> plans) {
  const auto& cfg = model.config();
  const auto& c = cfg.image;
  if (grids.empty()) throw UsageError("encode_image: empty batch");
  if (!plans.empty() && plans.size() != grids.size())
    throw UsageError("encode_image: one mask plan per image is required");
  const std::size_t B = grids.size(), M = grids[0].count(), pd = cfg.patch_dim();
  for (const auto& g : grids) {
    if (g.patch_size != cfg.patch_size)
      throw ConfigError("encode_image: patch size " + std::to_string(g.patch_size) +
                        " differs from the model's " + std::to_string(cfg.patch_size));
    if (g.count() != M) throw UsageError("encode_image: images in a batch must share a size");
  }
  if (M + 1 > c.max_positions)
    throw ConfigError("image sequence of " + std::to_string(M + 1) + " exceeds max_positions " +
                      std::to_string(c.max_positions));

  std::vector<double> flat(B * M * pd);
  for (std::size_t b = 0; b < B; ++b)
    std::copy(grids[b].patches.begin(), grids[b].patches.end(),
              flat.begin() + static_cast<std::ptrdiff_t>(b * M * pd));
  auto x = linear(Tensor::from({B * M, pd}, std::move(flat)), model.param("image.patch.w"),
                  model.param("image.patch.b"));
  std::vector<std::size_t> masked;
  for (std::size_t b = 0; b < plans.size(); ++b)
    for (auto pos : plans[b].positions) masked.push_back(b * M + pos);
  if (!masked.empty())
    x = replace_rows(x, masked, reshape(model.param("image.mask"), {c.width}));

  auto seq = concat({tile(model.param("image.cls"), B), reshape(x, {B, M, c.width})}, 1);
  seq = add(seq, tile(slice(model.param("image.pos"), 0, 0, M + 1), B));

  ImageEncoding enc;
  enc.batch = B;
  enc.patches = M;
  auto out = run_stack(model, "image", c, seq, nullptr, enc.attention, &enc.blocks);
  enc.hidden = out.hidden;
  enc.last_block = out.last_block;
  return enc;
}

TextEncoding encode_text(const Model& model, std::span<const text::TokenSequence> seqs) {
  const auto& cfg = model.config();
  const auto& c = cfg.text;
  if (seqs.empty()) throw UsageError("encode_text: empty batch");
  const std::size_t B = seqs.size(), L = seqs[0].length();
  if (L > c.max_positions)
    throw ConfigError("text sequence of " + std::to_string(L) + " exceeds max_positions " +
                      std::to_string(c.max_positions));
  TextEncoding enc;
  enc.batch = B;
  enc.length = L;
  std::vector<std::size_t> ids;
  ids.reserve(B * L);
  for (const auto& s : seqs) {
    if (s.length() != L) throw UsageError("encode_text: sequences in a batch must share a length");
    for (auto id : s.ids) {
      if (id >= cfg.vocab_size)
        throw UsageError("encode_text: token id " + std::to_string(id) + " outside vocabulary");
      ids.push_back(id);
    }
    enc.key_valid.insert(enc.key_valid.end(), s.attention.begin(), s.attention.end());
  }
  auto x = reshape(gather_rows(model.param("text.token"), ids), {B, L, c.width});
  x = add(x, tile(slice(model.param("text.pos"), 0, 0, L), B));
  enc.hidden = run_stack(model, "text", c, x, &enc.key_valid, enc.attention).hidden;
  return enc;
}

MultimodalEncoding fuse(const Model& model, const ImageEncoding& img, const TextEncoding& txt) {
  const auto& c = model.config().fusion;
  if (img.batch != txt.batch) throw UsageError("fuse: image and text batch sizes differ");
  const std::size_t B = img.batch, M = img.patches, L = txt.length;
  if (1 + M + L > c.max_positions)
    throw ConfigError("multimodal sequence of " + std::to_string(1 + M + L) +
                      " exceeds max_positions " + std::to_string(c.max_positions));
  MultimodalEncoding enc;
  enc.batch = B;
  enc.patches = M;
  enc.length = L;
  auto pi = linear(img.h_patches(), model.param("fusion.image_proj.w"),
                   model.param("fusion.image_proj.b"));
  auto pt = linear(txt.hidden, model.param("fusion.text_proj.w"),
                   model.param("fusion.text_proj.b"));
  auto seq = concat({tile(model.param("fusion.cls"), B), pi, pt}, 1);

  enc.key_valid.reserve(B * enc.seq_len());
  for (std::size_t b = 0; b < B; ++b) {
    enc.key_valid.insert(enc.key_valid.end(), 1 + M, 1);
    enc.key_valid.insert(enc.key_valid.end(),
                         txt.key_valid.begin() + static_cast<std::ptrdiff_t>(b * L),
                         txt.key_valid.begin() + static_cast<std::ptrdiff_t>((b + 1) * L));
  }
  enc.hidden = run_stack(model, "fusion", c, seq, &enc.key_valid, enc.attention).hidden;
  return enc;
}

}  // namespace mmet
