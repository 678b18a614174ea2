#include "mmet/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mmet/error.hpp"

namespace mmet::text {

namespace {

const std::vector<std::string>& reserved() {
  static const std::vector<std::string> r{"[PAD]", "[CLS_T]", "[MASK]", "[UNK]"};
  return r;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> words) {
  tokens_ = reserved();
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  for (auto& w : words) {
    if (std::find(reserved().begin(), reserved().end(), w) != reserved().end())
      throw UsageError("vocabulary word collides with reserved token " + w);
    tokens_.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = i;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw UsageError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> words;
  std::string line;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed vocabulary line: " + line);
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(0, tab));
    } catch (const std::exception&) {
      throw DataError("malformed vocabulary id: " + line);
    }
    if (id != expected++) throw DataError("vocabulary ids must be consecutive from 0");
    auto tok = line.substr(tab + 1);
    if (id < kNumReserved) {
      if (tok != reserved()[id]) throw DataError("reserved id " + std::to_string(id) + " is not " + reserved()[id]);
    } else {
      words.push_back(tok);
    }
  }
  Vocabulary v(words);
  if (v.size() != expected) throw DataError("vocabulary file is not in canonical order");
  for (std::size_t i = kNumReserved; i < v.size(); ++i)
    if (v.token(i) != words[i - kNumReserved]) throw DataError("vocabulary file is not in canonical order");
  return v;
}

std::vector<std::string> tokenize(const std::string& caption) {
  std::istringstream is(caption);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(w));
  }
  return out;
}

Vocabulary build_vocab(const std::vector<std::string>& captions) {
  if (captions.empty()) throw UsageError("build_vocab: empty corpus");
  std::set<std::string> words;
  for (const auto& c : captions)
    for (auto& w : tokenize(c)) words.insert(std::move(w));
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

std::size_t TokenSequence::real_words() const {
  std::size_t n = 0;
  for (std::size_t i = 1; i < ids.size(); ++i)
    if (attention[i]) ++n;
  return n;
}

TokenSequence empty_caption(std::size_t length) {
  if (length < 2) throw UsageError("encode: sequence length must be at least 2");
  TokenSequence seq;
  seq.ids.assign(length, kPad);
  seq.attention.assign(length, 0);
  seq.ids[0] = kCls;
  seq.attention[0] = 1;
  return seq;
}

TokenSequence encode(const std::string& caption, const Vocabulary& vocab, std::size_t length) {
  auto seq = empty_caption(length);
  std::size_t pos = 1;
  for (const auto& w : tokenize(caption)) {
    if (pos == length) break;
    seq.ids[pos] = vocab.id(w);
    seq.attention[pos] = 1;
    ++pos;
  }
  return seq;
}

MaskedText mask_tokens(const TokenSequence& seq, double ratio, std::size_t vocab_size, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("mask_tokens: ratio must lie in (0, 1)");
  MaskedText out{seq, {}};
  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i < seq.ids.size(); ++i)
    if (seq.attention[i]) candidates.push_back(i);
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(candidates.size())));
  auto picked = sample_without_replacement(candidates, count, rng);
  std::sort(picked.begin(), picked.end());
  for (auto pos : picked) {
    const double u = uniform01(rng);
    Corruption action = u < 0.8 ? Corruption::Mask : (u < 0.9 ? Corruption::Random : Corruption::Keep);
    out.plan.positions.push_back(pos);
    out.plan.original_ids.push_back(seq.ids[pos]);
    out.plan.actions.push_back(action);
    if (action == Corruption::Mask) {
      out.sequence.ids[pos] = kMask;
    } else if (action == Corruption::Random) {
      out.sequence.ids[pos] =
          vocab_size > kNumReserved ? kNumReserved + uniform_index(rng, vocab_size - kNumReserved) : kUnk;
    }
  }
  return out;
}

}  // namespace mmet::text
