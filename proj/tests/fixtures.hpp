#pragma once

#include <string>
#include <vector>

#include "mmet/dataset.hpp"
#include "mmet/image.hpp"
#include "mmet/model.hpp"
#include "mmet/text.hpp"

namespace mmet::testing {

inline ModelConfig small_config(std::size_t width, std::size_t depth, std::size_t vocab_size,
                                std::size_t num_classes = 0) {
  ModelConfig c;
  for (auto* e : {&c.image, &c.text, &c.fusion}) {
    e->width = width;
    e->depth = depth;
    e->heads = width >= 4 ? 4 : 1;
    e->mlp_ratio = 2;
  }
  c.image.max_positions = 9;
  c.text.max_positions = 8;
  c.fusion.max_positions = 17;
  c.vocab_size = vocab_size;
  c.num_classes = num_classes;
  return c;
}

inline image::PatchGrid grid_of(const Sample& s, std::size_t p = 16) {
  return image::patchify(s.image, p);
}

inline std::vector<image::PatchGrid> grids_of(const std::vector<Sample>& samples,
                                              std::size_t p = 16) {
  std::vector<image::PatchGrid> out;
  for (const auto& s : samples) out.push_back(grid_of(s, p));
  return out;
}

inline std::vector<text::TokenSequence> texts_of(const std::vector<Sample>& samples,
                                                 const text::Vocabulary& vocab,
                                                 std::size_t length = 8) {
  std::vector<text::TokenSequence> out;
  for (const auto& s : samples) out.push_back(text::encode(s.caption, vocab, length));
  return out;
}

inline text::Vocabulary vocab_of(const std::vector<Sample>& samples) {
  std::vector<std::string> captions;
  for (const auto& s : samples) captions.push_back(s.caption);
  return text::build_vocab(captions);
}

}  // namespace mmet::testing
