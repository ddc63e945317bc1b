#pragma once

// Token <-> id mapping with reserved sentinel slots, plus the two tokenizers
// (whitespace words, unicode scalars).

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "poemgen/common.hpp"

namespace poemgen {

// ============================================================================
// Tokenization
// ============================================================================

inline bool is_space_byte(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' ||
         c == '\v';
}

// Word mode: split on whitespace runs. Char mode: one token per unicode
// scalar, whitespace skipped. Total function; empty input yields {}.
inline std::vector<std::string> tokenize(std::string_view text,
                                         TokenMode mode) {
  std::vector<std::string> out;
  if (mode == TokenMode::word) {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && is_space_byte(text[i])) ++i;
      std::size_t j = i;
      while (j < text.size() && !is_space_byte(text[j])) ++j;
      if (j > i) out.emplace_back(text.substr(i, j - i));
      i = j;
    }
  } else {
    std::size_t i = 0;
    while (i < text.size()) {
      unsigned char c = static_cast<unsigned char>(text[i]);
      std::size_t len = 1;
      if (c >= 0xf0)
        len = 4;
      else if (c >= 0xe0)
        len = 3;
      else if (c >= 0xc0)
        len = 2;
      if (i + len > text.size()) len = 1;  // truncated sequence: take the byte
      if (!(len == 1 && is_space_byte(text[i])))
        out.emplace_back(text.substr(i, len));
      i += len;
    }
  }
  return out;
}

// ============================================================================
// Vocabulary
// ============================================================================

// Dense ids 0..size-1; slots 0..2 are the START/END/UNK sentinels. Surface
// entries keep first-insertion order so ingestion is reproducible byte for
// byte.
class Vocabulary {
 public:
  explicit Vocabulary(TokenMode mode = TokenMode::word) : mode_(mode) {
    add_entry(std::string(kStartText));
    add_entry(std::string(kEndText));
    add_entry(std::string(kUnkText));
  }

  TokenMode mode() const { return mode_; }
  TokenId size() const { return static_cast<TokenId>(entries_.size()); }

  bool contains(std::string_view text) const {
    return index_.find(std::string(text)) != index_.end();
  }

  // Inserts if absent. Sentinel literals are not insertable as new entries;
  // the unknown literal resolves to its reserved slot, start/end are refused.
  TokenId add(std::string_view text) {
    if (text == kStartText || text == kEndText)
      throw IngestError("reserved sentinel used as surface token: " +
                        std::string(text));
    auto it = index_.find(std::string(text));
    if (it != index_.end()) return it->second;
    return add_entry(std::string(text));
  }

  // Lookup only; absent tokens map to UNK.
  TokenId id_of(std::string_view text) const {
    auto it = index_.find(std::string(text));
    return it == index_.end() ? kUnkId : it->second;
  }

  const std::string& text_of(TokenId id) const {
    require(id >= 0 && id < size(), "token id out of range");
    return entries_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& entries() const { return entries_; }

  bool operator==(const Vocabulary& other) const {
    return mode_ == other.mode_ && entries_ == other.entries_;
  }

  void save(std::ostream& out) const {
    io::write_string(out, "poemgen-vocab");
    io::write_u32(out, 1);
    io::write_u8(out, mode_ == TokenMode::word ? 0 : 1);
    io::write_u64(out, entries_.size() - kNumReserved);
    for (std::size_t i = kNumReserved; i < entries_.size(); ++i)
      io::write_string(out, entries_[i]);
  }

  static Vocabulary load(std::istream& in) {
    if (io::read_string(in) != "poemgen-vocab")
      throw IoError("not a vocabulary file");
    if (io::read_u32(in) != 1) throw IoError("unsupported vocabulary version");
    TokenMode mode = io::read_u8(in) == 0 ? TokenMode::word : TokenMode::character;
    Vocabulary v(mode);
    std::uint64_t n = io::read_u64(in);
    for (std::uint64_t i = 0; i < n; ++i) v.add_entry(io::read_string(in));
    return v;
  }

 private:
  TokenId add_entry(std::string text) {
    TokenId id = static_cast<TokenId>(entries_.size());
    index_.emplace(text, id);
    entries_.push_back(std::move(text));
    return id;
  }

  TokenMode mode_;
  std::vector<std::string> entries_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace poemgen
