// SPDX-License-Identifier: Apache-2.0
#include "rebalance/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace rebalance {

namespace {

size_t utf8_char_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;  // invalid byte, consume singly
}

std::vector<std::pair<std::string, size_t>> split_words(
    const std::string& text) {
  std::vector<std::pair<std::string, size_t>> words;
  std::string cur;
  size_t start = 0;
  for (size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        words.emplace_back(cur, start);
        cur.clear();
      }
    } else {
      if (cur.empty()) start = i;
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) words.emplace_back(cur, start);
  return words;
}

}  // namespace

Vocab Vocab::from_pieces(
    const std::vector<std::pair<std::string, double>>& pieces) {
  Vocab v;
  for (size_t i = 0; i < pieces.size(); ++i) {
    const auto& [piece, lp] = pieces[i];
    if (piece.empty()) {
      throw ParseError("vocab: empty piece at line " + std::to_string(i + 1));
    }
    if (lp > 0.0) {
      throw ParseError("vocab: positive log-probability at line " +
                       std::to_string(i + 1));
    }
    if (v.index_.count(piece)) {
      throw ParseError("vocab: duplicate piece \"" + piece + "\" at line " +
                       std::to_string(i + 1));
    }
    v.index_.emplace(piece, kNumSpecials + int64_t(i));
    v.pieces_.push_back(pieces[i]);
    v.max_piece_bytes_ = std::max(v.max_piece_bytes_, piece.size());
  }
  return v;
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("vocab: cannot open " + path);
  std::vector<std::pair<std::string, double>> pieces;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("vocab: missing tab at line " + std::to_string(lineno));
    }
    const std::string piece = line.substr(0, tab);
    double lp = 0;
    try {
      size_t used = 0;
      lp = std::stod(line.substr(tab + 1), &used);
    } catch (const std::exception&) {
      throw ParseError("vocab: malformed log-probability at line " +
                       std::to_string(lineno));
    }
    if (lp > 0.0) {
      throw ParseError("vocab: positive log-probability at line " +
                       std::to_string(lineno));
    }
    if (piece.empty()) {
      throw ParseError("vocab: empty piece at line " + std::to_string(lineno));
    }
    for (const auto& [p, unused] : pieces) {
      if (p == piece) {
        throw ParseError("vocab: duplicate piece \"" + piece + "\" at line " +
                         std::to_string(lineno));
      }
    }
    pieces.emplace_back(piece, lp);
  }
  return from_pieces(pieces);
}

std::optional<int64_t> Vocab::piece_id(const std::string& piece) const {
  auto it = index_.find(piece);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

// Viterbi over one word (no whitespace). At position 0 a piece may match
// either verbatim or as "▁"+piece, so vocabularies with or without explicit
// boundary markers both work.
void segment_word(const std::string& word, const Vocab& v,
                  std::vector<std::pair<int64_t, size_t>>* out) {
  const size_t n = word.size();
  constexpr double kNegInf = -1e30;
  std::vector<double> best(n + 1, kNegInf);
  std::vector<int64_t> back_id(n + 1, -1);
  std::vector<size_t> back_len(n + 1, 0);
  best[0] = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (best[i] <= kNegInf / 2) continue;
    for (size_t len = 1; len <= n - i && len <= v.max_piece_bytes(); ++len) {
      const std::string sub = word.substr(i, len);
      std::optional<int64_t> id = v.piece_id(sub);
      if (!id && i == 0) id = v.piece_id(kWordBoundary + sub);
      if (!id) continue;
      const double cand = best[i] + v.log_prob(*id);
      const size_t j = i + len;
      if (cand > best[j] ||
          (cand == best[j] && len > back_len[j])) {
        best[j] = cand;
        back_id[j] = *id;
        back_len[j] = len;
      }
    }
    // [UNK] fallback over one character.
    const size_t clen = utf8_char_len(static_cast<unsigned char>(word[i]));
    const size_t j = std::min(n, i + clen);
    const double cand = best[i] + kUnkScore;
    if (cand > best[j] || (cand == best[j] && (j - i) > back_len[j])) {
      best[j] = cand;
      back_id[j] = kUnkId;
      back_len[j] = j - i;
    }
  }
  std::vector<std::pair<int64_t, size_t>> rev;
  size_t pos = n;
  while (pos > 0) {
    rev.emplace_back(back_id[pos], back_len[pos]);
    pos -= back_len[pos];
  }
  out->insert(out->end(), rev.rbegin(), rev.rend());
}

}  // namespace

std::vector<TokenSpan> segment_with_spans(const std::string& text,
                                          const Vocab& v) {
  std::vector<TokenSpan> spans;
  for (const auto& [word, start] : split_words(text)) {
    std::vector<std::pair<int64_t, size_t>> pieces;
    segment_word(word, v, &pieces);
    size_t at = start;
    for (const auto& [id, len] : pieces) {
      spans.push_back({id, at, at + len});
      at += len;
    }
  }
  return spans;
}

std::vector<int64_t> segment(const std::string& text, const Vocab& v) {
  std::vector<int64_t> ids;
  for (const TokenSpan& s : segment_with_spans(text, v)) ids.push_back(s.id);
  return ids;
}

Encoding encode_pair(const std::string& a, const std::optional<std::string>& b,
                     const Vocab& v, int64_t max_len) {
  if (max_len < 3) throw ConfigError("encode_pair: max_len must be >= 3");
  std::vector<int64_t> ida = segment(a, v);
  std::vector<int64_t> idb = b ? segment(*b, v) : std::vector<int64_t>{};
  const int64_t specials = b ? 3 : 2;  // [CLS] + [SEP] per segment
  // Trim the longer segment first until the packed length fits.
  while (int64_t(ida.size() + idb.size()) + specials > max_len) {
    if (ida.size() >= idb.size() && !ida.empty()) {
      ida.pop_back();
    } else if (!idb.empty()) {
      idb.pop_back();
    } else {
      break;
    }
  }
  Encoding e;
  auto push = [&](int64_t id, int64_t type, bool special) {
    e.ids.push_back(id);
    e.type_ids.push_back(type);
    e.special_mask.push_back(special);
  };
  push(kClsId, 0, true);
  for (int64_t id : ida) push(id, 0, false);
  push(kSepId, 0, true);
  if (b) {
    for (int64_t id : idb) push(id, 1, false);
    push(kSepId, 1, true);
  }
  return e;
}

}  // namespace rebalance
