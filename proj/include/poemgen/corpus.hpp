#pragma once

// Poem-structured corpora and the count statistics derived from them.
//
// File contract: UTF-8 text, one line per poem line, poems separated by
// exactly one blank line. Whitespace-only lines count as blank; an empty
// poem block (leading, doubled, or trailing blank line) is an ingestion
// error naming the offending line number.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poemgen/common.hpp"
#include "poemgen/vocabulary.hpp"

namespace poemgen {

using Line = std::vector<TokenId>;
using PoemLines = std::vector<Line>;

struct Corpus {
  std::vector<PoemLines> poems;
  TokenMode mode = TokenMode::word;

  std::size_t line_count() const {
    std::size_t n = 0;
    for (const auto& p : poems) n += p.size();
    return n;
  }

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& p : poems)
      for (const auto& l : p) n += l.size();
    return n;
  }

  bool operator==(const Corpus& other) const {
    return mode == other.mode && poems == other.poems;
  }
};

namespace detail {

inline bool is_blank(std::string_view s) {
  for (char c : s)
    if (!is_space_byte(c)) return false;
  return true;
}

// Splits file text into poem blocks of (line_number, raw_line) pairs.
inline std::vector<std::vector<std::pair<int, std::string>>> split_blocks(
    const std::string& text, const std::string& origin) {
  std::vector<std::vector<std::pair<int, std::string>>> blocks;
  std::vector<std::pair<int, std::string>> current;
  int line_no = 0;
  std::istringstream in(text);
  std::string raw;
  bool saw_any = false;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (is_blank(raw)) {
      if (current.empty())
        throw IngestError(origin + ":" + std::to_string(line_no) +
                          ": empty poem block");
      blocks.push_back(std::move(current));
      current.clear();
      saw_any = true;
    } else {
      current.emplace_back(line_no, raw);
      saw_any = true;
    }
  }
  if (!current.empty())
    blocks.push_back(std::move(current));
  else if (saw_any)
    throw IngestError(origin + ":" + std::to_string(line_no) +
                      ": empty poem block");
  if (blocks.empty()) throw IngestError(origin + ": no poems found");
  return blocks;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace detail

// Builds the corpus and its vocabulary in one pass over the file. Tokens
// occurring fewer than min_count times map to UNK and get no vocabulary
// entry; min_count = 1 disables the cutoff. Returns (corpus, vocabulary).
inline std::pair<Corpus, Vocabulary> ingest_corpus_text(
    const std::string& text, TokenMode mode, int min_count = 1,
    const std::string& origin = "<string>") {
  auto blocks = detail::split_blocks(text, origin);

  // First pass: token strings per line, plus raw occurrence counts for the
  // min-count cutoff.
  std::vector<std::vector<std::vector<std::string>>> token_blocks;
  std::unordered_map<std::string, std::int64_t> raw_count;
  for (const auto& block : blocks) {
    std::vector<std::vector<std::string>> poem;
    for (const auto& [line_no, raw] : block) {
      auto toks = tokenize(raw, mode);
      if (toks.empty())
        throw IngestError(origin + ":" + std::to_string(line_no) +
                          ": line has no tokens");
      for (const auto& t : toks) {
        if (t == kStartText || t == kEndText)
          throw IngestError(origin + ":" + std::to_string(line_no) +
                            ": reserved sentinel used as surface token: " + t);
        ++raw_count[t];
      }
      poem.push_back(std::move(toks));
    }
    token_blocks.push_back(std::move(poem));
  }

  Vocabulary vocab(mode);
  Corpus corpus;
  corpus.mode = mode;
  for (const auto& poem : token_blocks) {
    PoemLines lines;
    for (const auto& toks : poem) {
      Line line;
      line.reserve(toks.size());
      for (const auto& t : toks) {
        if (t == kUnkText || raw_count[t] < min_count)
          line.push_back(kUnkId);
        else
          line.push_back(vocab.add(t));
      }
      lines.push_back(std::move(line));
    }
    corpus.poems.push_back(std::move(lines));
  }
  return {std::move(corpus), std::move(vocab)};
}

inline std::pair<Corpus, Vocabulary> ingest_corpus(const std::string& path,
                                                   TokenMode mode,
                                                   int min_count = 1) {
  return ingest_corpus_text(detail::read_file(path), mode, min_count, path);
}

// Renders a corpus back to the file format (word mode joins with spaces,
// char mode concatenates scalars). Round trip: re-ingesting the output
// yields an equal corpus.
inline std::string serialize_corpus(const Corpus& corpus,
                                    const Vocabulary& vocab) {
  std::string out;
  const char* sep = corpus.mode == TokenMode::word ? " " : "";
  for (std::size_t p = 0; p < corpus.poems.size(); ++p) {
    if (p > 0) out += "\n";
    for (const auto& line : corpus.poems[p]) {
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (i > 0) out += sep;
        out += vocab.text_of(line[i]);
      }
      out += "\n";
    }
  }
  return out;
}

// Every line's token order reversed; structure unchanged. Involution.
inline Corpus reverse(const Corpus& corpus) {
  Corpus out = corpus;
  for (auto& poem : out.poems)
    for (auto& line : poem) std::reverse(line.begin(), line.end());
  return out;
}

// ============================================================================
// Count statistics
// ============================================================================

struct FrequencyTable {
  std::vector<std::int64_t> count;  // indexed by token id
  std::int64_t total = 0;

  std::int64_t at(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= count.size()) return 0;
    return count[static_cast<std::size_t>(id)];
  }

  bool operator==(const FrequencyTable& o) const {
    return total == o.total && count == o.count;
  }
};

inline FrequencyTable frequencies(const Corpus& corpus) {
  FrequencyTable table;
  for (const auto& poem : corpus.poems)
    for (const auto& line : poem)
      for (TokenId t : line) {
        if (static_cast<std::size_t>(t) >= table.count.size())
          table.count.resize(static_cast<std::size_t>(t) + 1, 0);
        ++table.count[static_cast<std::size_t>(t)];
        ++table.total;
      }
  return table;
}

// count(a,b) = number of poems containing both a and b (a != b). Both
// orientations are stored so partner scans are ordered range walks.
struct CooccurrenceTable {
  std::map<std::pair<TokenId, TokenId>, std::int64_t> count;

  std::int64_t at(TokenId a, TokenId b) const {
    auto it = count.find({a, b});
    return it == count.end() ? 0 : it->second;
  }

  // All b with count(a,b) > 0, ascending by id.
  std::vector<std::pair<TokenId, std::int64_t>> partners(TokenId a) const {
    std::vector<std::pair<TokenId, std::int64_t>> out;
    for (auto it = count.lower_bound({a, 0});
         it != count.end() && it->first.first == a; ++it)
      out.emplace_back(it->first.second, it->second);
    return out;
  }

  bool operator==(const CooccurrenceTable& o) const { return count == o.count; }
};

inline CooccurrenceTable cooccurrence(const Corpus& corpus) {
  CooccurrenceTable table;
  for (const auto& poem : corpus.poems) {
    std::vector<TokenId> members;
    for (const auto& line : poem)
      for (TokenId t : line) members.push_back(t);
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        ++table.count[{members[i], members[j]}];
        ++table.count[{members[j], members[i]}];
      }
  }
  return table;
}

// ============================================================================
// Statistics serialization
// ============================================================================

inline void save_stats(std::ostream& out, const FrequencyTable& freq,
                       const CooccurrenceTable& cooc) {
  io::write_string(out, "poemgen-stats");
  io::write_u32(out, 1);
  io::write_u64(out, freq.count.size());
  for (std::int64_t c : freq.count) io::write_i64(out, c);
  io::write_i64(out, freq.total);
  io::write_u64(out, cooc.count.size());
  for (const auto& [key, c] : cooc.count) {
    io::write_u32(out, static_cast<std::uint32_t>(key.first));
    io::write_u32(out, static_cast<std::uint32_t>(key.second));
    io::write_i64(out, c);
  }
}

inline std::pair<FrequencyTable, CooccurrenceTable> load_stats(
    std::istream& in) {
  if (io::read_string(in) != "poemgen-stats")
    throw IoError("not a statistics file");
  if (io::read_u32(in) != 1) throw IoError("unsupported statistics version");
  FrequencyTable freq;
  freq.count.resize(io::read_u64(in));
  for (auto& c : freq.count) c = io::read_i64(in);
  freq.total = io::read_i64(in);
  CooccurrenceTable cooc;
  std::uint64_t pairs = io::read_u64(in);
  for (std::uint64_t i = 0; i < pairs; ++i) {
    TokenId a = static_cast<TokenId>(io::read_u32(in));
    TokenId b = static_cast<TokenId>(io::read_u32(in));
    cooc.count[{a, b}] = io::read_i64(in);
  }
  return {std::move(freq), std::move(cooc)};
}

// ============================================================================
// POS corpus
// ============================================================================

// Tag sequences aligned 1:1 with a token corpus. Tags live in their own
// vocabulary (with the same reserved slots) so the recurrent trainer can
// consume them unchanged.
struct PosCorpus {
  Corpus tags;
  Vocabulary tag_vocab{TokenMode::word};
  std::string aligned_with;  // token file named by the header
};

// File format: first line "#aligned-with: <name>", then the corpus layout
// with whitespace-separated tags per line. Line lengths must match the
// token corpus exactly.
inline PosCorpus load_pos_corpus(const std::string& path,
                                 const Corpus& aligned) {
  std::string text = detail::read_file(path);
  std::size_t eol = text.find('\n');
  std::string header = eol == std::string::npos ? text : text.substr(0, eol);
  if (!header.empty() && header.back() == '\r') header.pop_back();
  const std::string prefix = "#aligned-with:";
  if (header.rfind(prefix, 0) != 0)
    throw IngestError(path + ":1: missing #aligned-with: header");
  std::string target = header.substr(prefix.size());
  std::size_t b = target.find_first_not_of(" \t");
  target = b == std::string::npos ? "" : target.substr(b);

  std::string body = eol == std::string::npos ? "" : text.substr(eol + 1);
  auto [tags, tag_vocab] =
      ingest_corpus_text(body, TokenMode::word, 1, path);

  if (tags.poems.size() != aligned.poems.size())
    throw IngestError(path + ": poem count mismatch with token corpus");
  for (std::size_t p = 0; p < tags.poems.size(); ++p) {
    if (tags.poems[p].size() != aligned.poems[p].size())
      throw IngestError(path + ": line count mismatch in poem " +
                        std::to_string(p + 1));
    for (std::size_t l = 0; l < tags.poems[p].size(); ++l)
      if (tags.poems[p][l].size() != aligned.poems[p][l].size())
        throw IngestError(path + ": tag/token length mismatch in poem " +
                          std::to_string(p + 1) + " line " +
                          std::to_string(l + 1));
  }
  return {std::move(tags), std::move(tag_vocab), std::move(target)};
}

}  // namespace poemgen
