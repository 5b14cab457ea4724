// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_TOKENIZER_HPP_
#define REBALANCE_TOKENIZER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rebalance/errors.hpp"

namespace rebalance {

// Special token ids, fixed across all vocabularies.
constexpr int64_t kPadId = 0;
constexpr int64_t kUnkId = 1;
constexpr int64_t kClsId = 2;
constexpr int64_t kSepId = 3;
constexpr int64_t kMaskId = 4;
constexpr int64_t kNumSpecials = 5;

// Score assigned to an [UNK] fallback arc in the segmentation lattice; large
// enough that real pieces always win when they cover the text.
constexpr double kUnkScore = -1e4;

// Word-boundary marker prefixed to each whitespace-separated word.
inline const std::string kWordBoundary = "\xe2\x96\x81";  // "▁"

// Unigram-LM vocabulary loaded from a piece<TAB>logprob TSV. Ids are
// 5 + line index; ids 0..4 are the special tokens. Immutable after load.
class Vocab {
 public:
  static Vocab load(const std::string& path);
  static Vocab from_pieces(
      const std::vector<std::pair<std::string, double>>& pieces);

  int64_t size() const { return kNumSpecials + int64_t(pieces_.size()); }
  // Piece lookup; returns id or nullopt.
  std::optional<int64_t> piece_id(const std::string& piece) const;
  double log_prob(int64_t id) const { return pieces_[id - kNumSpecials].second; }
  const std::string& piece(int64_t id) const {
    return pieces_[id - kNumSpecials].first;
  }
  size_t max_piece_bytes() const { return max_piece_bytes_; }

 private:
  std::vector<std::pair<std::string, double>> pieces_;
  std::unordered_map<std::string, int64_t> index_;
  size_t max_piece_bytes_ = 0;
};

struct Encoding {
  std::vector<int64_t> ids;
  std::vector<int64_t> type_ids;
  std::vector<bool> special_mask;  // true for [CLS]/[SEP]
};

// Viterbi segmentation of UTF-8 text into piece ids. Text is pre-split on
// whitespace; each word carries a "▁" boundary marker which the first piece
// of the word may either include explicitly or absorb for free. Uncovered
// characters come out as [UNK]. Ties prefer the longer final piece.
std::vector<int64_t> segment(const std::string& text, const Vocab& v);

// Segmentation with byte spans into the original text, used to map
// character annotations onto tokens.
struct TokenSpan {
  int64_t id;
  size_t byte_begin;
  size_t byte_end;
};
std::vector<TokenSpan> segment_with_spans(const std::string& text,
                                          const Vocab& v);

// BERT-style packing: [CLS] a [SEP] (b [SEP]). The longer segment is trimmed
// first until the total length fits max_len.
Encoding encode_pair(const std::string& a, const std::optional<std::string>& b,
                     const Vocab& v, int64_t max_len);

}  // namespace rebalance

#endif  // REBALANCE_TOKENIZER_HPP_
