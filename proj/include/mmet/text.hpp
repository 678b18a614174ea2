#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmet/rng.hpp"

namespace mmet::text {

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kCls = 1;
inline constexpr std::size_t kMask = 2;
inline constexpr std::size_t kUnk = 3;
inline constexpr std::size_t kNumReserved = 4;

// Word-level vocabulary with fixed reserved ids; other words get ids in
// lexicographic order.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;  // kUnk when absent
  const std::string& token(std::size_t id) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // "id<TAB>token" per line, reserved ids first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> ids_;
};

std::vector<std::string> tokenize(const std::string& caption);

Vocabulary build_vocab(const std::vector<std::string>& captions);

struct TokenSequence {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> attention;  // 0 exactly on padding

  std::size_t length() const { return ids.size(); }
  std::size_t real_words() const;  // non-CLS, non-padding tokens
  bool operator==(const TokenSequence&) const = default;
};

// [CLS_T] + word ids, truncated or padded to `length`.
TokenSequence encode(const std::string& caption, const Vocabulary& vocab, std::size_t length);

// [CLS_T] followed by padding: the caption slot for image-only inputs.
TokenSequence empty_caption(std::size_t length);

enum class Corruption : std::uint8_t { Mask, Random, Keep };

struct TextMaskPlan {
  std::vector<std::size_t> positions;     // ascending
  std::vector<std::size_t> original_ids;  // aligned with positions
  std::vector<Corruption> actions;        // aligned with positions

  bool empty() const { return positions.empty(); }
  std::size_t size() const { return positions.size(); }
};

struct MaskedText {
  TokenSequence sequence;  // corrupted copy
  TextMaskPlan plan;
};

/// Selects floor(ratio * real words) word positions without replacement and
/// corrupts each one: 80% become MASK, 10% a random word id, 10% stay.
MaskedText mask_tokens(const TokenSequence& seq, double ratio, std::size_t vocab_size, Rng& rng);

}  // namespace mmet::text
