#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmet/checkpoint.hpp"
#include "mmet/image.hpp"
#include "mmet/tensor.hpp"
#include "mmet/text.hpp"

namespace mmet {

struct EncoderConfig {
  std::size_t depth = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t max_positions = 64;

  void validate(const std::string& name) const;
  bool operator==(const EncoderConfig&) const = default;
};

struct ModelConfig {
  EncoderConfig image{2, 64, 4, 2, 129};
  EncoderConfig text{2, 64, 4, 2, 32};
  EncoderConfig fusion{2, 64, 4, 2, 161};
  std::size_t patch_size = 16;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 0;  // ID head width; 0 leaves the head out

  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter set of the three encoders and all prediction heads.
///
/// Parameter names are stable and double as checkpoint block names, e.g.
/// "image.blocks.0.attn.qkv.w" or "head.itm.b".
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  bool has(const std::string& name) const { return params_.count(name) != 0; }
  const Tensor& param(const std::string& name) const;
  std::size_t parameter_count() const;
  void clear_grads() const;

  // Re-draws every parameter whose name starts with `prefix`.
  void reinitialize(const std::string& prefix, std::uint64_t seed);

  void export_to(Checkpoint& ck) const;
  // strict: the checkpoint must hold exactly this model's parameters.
  // Otherwise parameters missing from the checkpoint keep their values and
  // are listed in `missing`. A shape mismatch is always an error.
  void import_from(const Checkpoint& ck, bool strict, std::vector<std::string>* missing = nullptr);

 private:
  void add(const std::string& name, Shape shape, char kind);
  void init(const std::string& name, std::uint64_t seed);

  ModelConfig config_;
  std::vector<std::string> names_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, char> kinds_;
};

struct ImageEncoding {
  Tensor hidden;      // [B, 1+M, d]; row 0 is CLS_I
  Tensor last_block;  // output of the final block before the closing norm
  std::vector<Tensor> blocks;  // output of every block, in order
  std::vector<Tensor> attention;  // per block, [B*heads, 1+M, 1+M]
  std::size_t batch = 0;
  std::size_t patches = 0;

  Tensor h_cls() const;      // [B, d]
  Tensor h_patches() const;  // [B, M, d]
};

struct TextEncoding {
  Tensor hidden;  // [B, L, d]; row 0 is CLS_T
  std::vector<std::uint8_t> key_valid;  // B*L attention flags
  std::vector<Tensor> attention;
  std::size_t batch = 0;
  std::size_t length = 0;

  Tensor h_cls() const;
};

struct MultimodalEncoding {
  Tensor hidden;  // [B, 1+M+L, d_m] = [CLS_M; proj(h_I); proj(h_T)]
  std::vector<std::uint8_t> key_valid;
  std::vector<Tensor> attention;
  std::size_t batch = 0;
  std::size_t patches = 0;
  std::size_t length = 0;

  std::size_t seq_len() const { return 1 + patches + length; }
  std::size_t image_begin() const { return 1; }
  std::size_t text_begin() const { return 1 + patches; }
  // Row of `hidden` viewed as [B*(1+M+L), d_m].
  std::size_t image_row(std::size_t b, std::size_t patch) const {
    return b * seq_len() + image_begin() + patch;
  }
  std::size_t text_row(std::size_t b, std::size_t pos) const {
    return b * seq_len() + text_begin() + pos;
  }
  Tensor h_cls() const;
};

// Masked patches (when plans are given, one per grid) enter as the learned
// mask embedding.
ImageEncoding encode_image(const Model& model, std::span<const image::PatchGrid> grids,
                           std::span<const image::ImageMaskPlan> plans = {});
// Any corruption is expected to be present in the sequences already.
TextEncoding encode_text(const Model& model, std::span<const text::TokenSequence> seqs);
MultimodalEncoding fuse(const Model& model, const ImageEncoding& img, const TextEncoding& txt);

}  // namespace mmet
