#pragma once

// Keyword pipeline: tag-sheet ingestion (the frozen boundary where an image
// recognizer would plug in), confidence and corpus-frequency filtering, and
// expansion to N seed keywords by corpus frequency or co-occurrence weight.
//
// Conventions frozen here:
//   - thresholds are inclusive: confidence >= tau, count >= f_min
//   - per-class quotas apply before the threshold filters
//   - expansion samples without replacement; weights never include tokens
//     already chosen or reserved ids
//   - final ordering: extracted keywords by confidence, then expanded
//     keywords in sampling order

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poemgen/corpus.hpp"

namespace poemgen {

// ============================================================================
// Tag candidates
// ============================================================================

enum class WordClass { noun, adjective };

inline const char* to_string(WordClass c) {
  return c == WordClass::noun ? "noun" : "adjective";
}

struct TagCandidate {
  std::string word;
  WordClass word_class = WordClass::noun;
  double confidence = 0.0;
};

// One tag file: an optional source-image identifier plus the candidates,
// nouns first, each class ordered by confidence descending.
struct TagSheet {
  std::string image_id;
  std::vector<TagCandidate> candidates;
};

// ============================================================================
// Keyword set
// ============================================================================

enum class KeywordOrigin { extracted, expanded_freq, expanded_cooc };

inline const char* to_string(KeywordOrigin o) {
  switch (o) {
    case KeywordOrigin::extracted: return "extracted";
    case KeywordOrigin::expanded_freq: return "expanded-freq";
    default: return "expanded-cooc";
  }
}

// A seed keyword: its surface form and token ids (one id in word mode, the
// character sequence in char mode).
struct Keyword {
  std::string word;
  Line tokens;
  KeywordOrigin origin = KeywordOrigin::extracted;
};

struct KeywordSet {
  std::vector<Keyword> items;

  std::size_t size() const { return items.size(); }
  bool contains_tokens(const Line& tokens) const {
    for (const auto& k : items)
      if (k.tokens == tokens) return true;
    return false;
  }
};

enum class ExpansionStrategy { none, frequency, cooccurrence };

inline const char* to_string(ExpansionStrategy s) {
  switch (s) {
    case ExpansionStrategy::none: return "none";
    case ExpansionStrategy::frequency: return "frequency";
    default: return "cooccurrence";
  }
}

inline ExpansionStrategy strategy_from_string(const std::string& s) {
  if (s == "none") return ExpansionStrategy::none;
  if (s == "frequency") return ExpansionStrategy::frequency;
  if (s == "cooccurrence") return ExpansionStrategy::cooccurrence;
  throw ConfigError("unknown expansion strategy: " + s);
}

struct KeywordConfig {
  double confidence_threshold = 0.5;  // tau, inclusive
  std::int64_t min_frequency = 5;     // f_min, inclusive
  int target_count = 4;               // N, the number of seeds = poem lines
  ExpansionStrategy strategy = ExpansionStrategy::cooccurrence;
  int noun_quota = 2;
  int adjective_quota = 2;

  bool operator==(const KeywordConfig&) const = default;

  void validate() const {
    if (confidence_threshold < 0.0 || confidence_threshold > 1.0)
      throw ConfigError("confidence threshold must be in [0, 1]");
    if (min_frequency < 0) throw ConfigError("minimum frequency must be >= 0");
    if (target_count < 1) throw ConfigError("keyword count must be positive");
    if (noun_quota < 0 || adjective_quota < 0)
      throw ConfigError("class quotas must be >= 0");
  }
};

// ============================================================================
// Tag ingestion
// ============================================================================

namespace keyword_detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space_byte(s[b])) ++b;
  while (e > b && is_space_byte(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline double parse_confidence(const std::string& field,
                               const std::string& origin, int record) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw IngestError(origin + ": tag record " + std::to_string(record) +
                      ": unparseable confidence '" + field + "'");
  if (value < 0.0 || value > 1.0)
    throw IngestError(origin + ": tag record " + std::to_string(record) +
                      ": confidence " + field + " outside [0, 1]");
  return value;
}

}  // namespace keyword_detail

// Parses tag text: optional "#image: <id>" header, "#" comments, blank
// lines, and records of the form "word class confidence".
inline TagSheet load_tags_text(const std::string& text,
                               const std::string& origin = "<string>") {
  TagSheet sheet;
  std::size_t pos = 0;
  int record = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string raw = nl == std::string::npos ? text.substr(pos)
                                              : text.substr(pos, nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::string line = keyword_detail::trim(raw);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "#image:";
      if (line.rfind(key, 0) == 0)
        sheet.image_id = keyword_detail::trim(line.substr(key.size()));
      continue;  // other # lines are comments
    }

    ++record;
    std::vector<std::string> fields;
    for (const std::string& tok : tokenize(line, TokenMode::word))
      fields.push_back(tok);
    if (fields.size() != 3)
      throw IngestError(origin + ": tag record " + std::to_string(record) +
                        ": expected 'word class confidence'");
    TagCandidate cand;
    cand.word = fields[0];
    if (fields[1] == "noun")
      cand.word_class = WordClass::noun;
    else if (fields[1] == "adjective")
      cand.word_class = WordClass::adjective;
    else
      throw IngestError(origin + ": tag record " + std::to_string(record) +
                        ": unknown class '" + fields[1] + "'");
    cand.confidence =
        keyword_detail::parse_confidence(fields[2], origin, record);
    sheet.candidates.push_back(std::move(cand));
  }

  // Nouns first, each class sorted by confidence descending (stable, so
  // equal confidences keep file order).
  std::stable_sort(sheet.candidates.begin(), sheet.candidates.end(),
                   [](const TagCandidate& a, const TagCandidate& b) {
                     if (a.word_class != b.word_class)
                       return a.word_class == WordClass::noun;
                     return a.confidence > b.confidence;
                   });
  return sheet;
}

inline TagSheet load_tags(const std::string& path) {
  return load_tags_text(detail::read_file(path), path);
}

// ============================================================================
// Filtering
// ============================================================================

// Token ids of a keyword's surface form, or nothing if any token falls
// outside the vocabulary.
inline std::optional<Line> keyword_tokens(const std::string& word,
                                          const Vocabulary& vocab,
                                          TokenMode mode) {
  Line ids;
  for (const std::string& tok : tokenize(word, mode)) {
    TokenId id = vocab.id_of(tok);
    if (id == kUnkId && tok != kUnkText) return std::nullopt;
    ids.push_back(id);
  }
  if (ids.empty()) return std::nullopt;
  return ids;
}

// Corpus frequency of a keyword: the minimum count over its tokens, so a
// multi-token (char mode) keyword is only as frequent as its rarest piece.
inline std::int64_t keyword_frequency(const Line& tokens,
                                      const FrequencyTable& freq) {
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  for (TokenId t : tokens) lo = std::min(lo, freq.at(t));
  return lo;
}

// Quotas first (top noun_quota nouns and top adjective_quota adjectives by
// confidence), then the inclusive confidence/frequency/vocabulary filters.
// The result is ordered by confidence descending across classes.
inline std::vector<TagCandidate> filter_keywords(
    const std::vector<TagCandidate>& candidates, const Vocabulary& vocab,
    TokenMode mode, const FrequencyTable& freq, const KeywordConfig& config) {
  config.validate();

  std::vector<TagCandidate> sorted = candidates;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const TagCandidate& a, const TagCandidate& b) {
                     if (a.word_class != b.word_class)
                       return a.word_class == WordClass::noun;
                     return a.confidence > b.confidence;
                   });

  std::vector<TagCandidate> kept;
  int nouns = 0, adjectives = 0;
  for (const TagCandidate& cand : sorted) {
    int& used = cand.word_class == WordClass::noun ? nouns : adjectives;
    int quota = cand.word_class == WordClass::noun ? config.noun_quota
                                                   : config.adjective_quota;
    if (used >= quota) continue;
    ++used;
    if (cand.confidence < config.confidence_threshold) continue;
    auto ids = keyword_tokens(cand.word, vocab, mode);
    if (!ids) continue;
    if (keyword_frequency(*ids, freq) < config.min_frequency) continue;
    kept.push_back(cand);
  }

  std::stable_sort(kept.begin(), kept.end(),
                   [](const TagCandidate& a, const TagCandidate& b) {
                     return a.confidence > b.confidence;
                   });
  return kept;
}

// ============================================================================
// Expansion
// ============================================================================

namespace keyword_detail {

struct WeightedPool {
  std::vector<TokenId> ids;      // ascending
  std::vector<double> weights;   // parallel, strictly positive
};

// One weighted draw without replacement; deterministic given the rng.
inline TokenId draw(WeightedPool& pool, Rng& rng) {
  require(!pool.ids.empty(), "draw from an empty pool");
  double total = 0.0;
  for (double w : pool.weights) total += w;
  require(total > 0.0, "pool weights must be positive");
  double r = uniform01(rng) * total;
  std::size_t pick = pool.ids.size() - 1;  // guards floating-point residue
  double cum = 0.0;
  for (std::size_t k = 0; k < pool.ids.size(); ++k) {
    cum += pool.weights[k];
    if (r < cum) {
      pick = k;
      break;
    }
  }
  TokenId id = pool.ids[pick];
  pool.ids.erase(pool.ids.begin() + static_cast<std::ptrdiff_t>(pick));
  pool.weights.erase(pool.weights.begin() + static_cast<std::ptrdiff_t>(pick));
  return id;
}

inline bool chosen_contains(const KeywordSet& set, TokenId id) {
  for (const auto& k : set.items)
    for (TokenId t : k.tokens)
      if (t == id) return true;
  return false;
}

inline WeightedPool frequency_pool(const FrequencyTable& freq,
                                   const KeywordConfig& config,
                                   const KeywordSet& chosen) {
  WeightedPool pool;
  for (TokenId t = kNumReserved;
       t < static_cast<TokenId>(freq.count.size()); ++t) {
    if (freq.at(t) < config.min_frequency || freq.at(t) == 0) continue;
    if (chosen_contains(chosen, t)) continue;
    pool.ids.push_back(t);
    pool.weights.push_back(static_cast<double>(freq.at(t)));
  }
  return pool;
}

inline WeightedPool cooccurrence_pool(const std::vector<Line>& filtered_ids,
                                      const CooccurrenceTable& cooc,
                                      const FrequencyTable& freq,
                                      const KeywordConfig& config,
                                      const KeywordSet& chosen) {
  std::map<TokenId, std::int64_t> weight;  // summed over filtered keywords
  for (const Line& ids : filtered_ids)
    for (TokenId k : ids)
      for (const auto& [partner, count] : cooc.partners(k))
        weight[partner] += count;

  WeightedPool pool;
  for (const auto& [t, w] : weight) {
    if (w <= 0 || is_reserved(t)) continue;
    if (freq.at(t) < config.min_frequency || freq.at(t) == 0) continue;
    if (chosen_contains(chosen, t)) continue;
    pool.ids.push_back(t);
    pool.weights.push_back(static_cast<double>(w));
  }
  return pool;
}

// Converts filtered candidates into the extracted prefix of a keyword set,
// skipping duplicates and truncating at target_count.
inline KeywordSet extracted_set(const std::vector<TagCandidate>& filtered,
                                const Vocabulary& vocab, TokenMode mode,
                                const KeywordConfig& config) {
  KeywordSet set;
  for (const TagCandidate& cand : filtered) {
    if (set.size() >= static_cast<std::size_t>(config.target_count)) break;
    auto ids = keyword_tokens(cand.word, vocab, mode);
    require(ids.has_value(), "filtered keyword left the vocabulary");
    if (set.contains_tokens(*ids)) continue;
    set.items.push_back({cand.word, *ids, KeywordOrigin::extracted});
  }
  return set;
}

}  // namespace keyword_detail

// Fills the set to N by sampling tokens without replacement, weight
// proportional to corpus frequency among tokens with count >= f_min.
inline KeywordSet expand_by_frequency(const std::vector<TagCandidate>& filtered,
                                      const Vocabulary& vocab, TokenMode mode,
                                      const FrequencyTable& freq,
                                      const KeywordConfig& config, Rng& rng) {
  config.validate();
  KeywordSet set = keyword_detail::extracted_set(filtered, vocab, mode, config);
  auto pool = keyword_detail::frequency_pool(freq, config, set);
  std::size_t need = static_cast<std::size_t>(config.target_count);
  if (set.size() + pool.ids.size() < need)
    throw GenerateError(
        "keyword expansion needs " + std::to_string(need) +
        " keywords but only " + std::to_string(set.size() + pool.ids.size()) +
        " eligible tokens exist");
  while (set.size() < need) {
    TokenId id = keyword_detail::draw(pool, rng);
    set.items.push_back(
        {vocab.text_of(id), {id}, KeywordOrigin::expanded_freq});
  }
  return set;
}

// Fills the set to N from the pool of tokens co-occurring with at least one
// filtered keyword, weight = summed co-occurrence count over all filtered
// keywords. When that pool runs dry the remainder falls back to frequency
// expansion, flagged by origin expanded-freq.
inline KeywordSet expand_by_cooccurrence(
    const std::vector<TagCandidate>& filtered, const Vocabulary& vocab,
    TokenMode mode, const CooccurrenceTable& cooc, const FrequencyTable& freq,
    const KeywordConfig& config, Rng& rng) {
  config.validate();
  KeywordSet set = keyword_detail::extracted_set(filtered, vocab, mode, config);

  std::vector<Line> filtered_ids;
  for (const auto& k : set.items) filtered_ids.push_back(k.tokens);

  auto pool =
      keyword_detail::cooccurrence_pool(filtered_ids, cooc, freq, config, set);
  std::size_t need = static_cast<std::size_t>(config.target_count);
  while (set.size() < need && !pool.ids.empty()) {
    TokenId id = keyword_detail::draw(pool, rng);
    set.items.push_back(
        {vocab.text_of(id), {id}, KeywordOrigin::expanded_cooc});
  }
  if (set.size() < need) {
    auto fallback = keyword_detail::frequency_pool(freq, config, set);
    if (set.size() + fallback.ids.size() < need)
      throw GenerateError(
          "keyword expansion needs " + std::to_string(need) +
          " keywords but only " +
          std::to_string(set.size() + fallback.ids.size()) +
          " eligible tokens exist");
    while (set.size() < need) {
      TokenId id = keyword_detail::draw(fallback, rng);
      set.items.push_back(
          {vocab.text_of(id), {id}, KeywordOrigin::expanded_freq});
    }
  }
  return set;
}

// ============================================================================
// Orchestration
// ============================================================================

struct AssembledKeywords {
  KeywordSet keywords;
  std::string image_id;
  std::vector<TagCandidate> filtered;  // post-filter extracted candidates
};

inline AssembledKeywords assemble_keywords(const TagSheet& sheet,
                                           const Vocabulary& vocab,
                                           TokenMode mode,
                                           const FrequencyTable& freq,
                                           const CooccurrenceTable& cooc,
                                           const KeywordConfig& config,
                                           Rng& rng) {
  config.validate();
  AssembledKeywords out;
  out.image_id = sheet.image_id;
  out.filtered = filter_keywords(sheet.candidates, vocab, mode, freq, config);
  switch (config.strategy) {
    case ExpansionStrategy::none:
      out.keywords =
          keyword_detail::extracted_set(out.filtered, vocab, mode, config);
      break;
    case ExpansionStrategy::frequency:
      out.keywords =
          expand_by_frequency(out.filtered, vocab, mode, freq, config, rng);
      break;
    case ExpansionStrategy::cooccurrence:
      out.keywords = expand_by_cooccurrence(out.filtered, vocab, mode, cooc,
                                            freq, config, rng);
      break;
  }
  return out;
}

inline AssembledKeywords assemble_keywords(const std::string& tag_path,
                                           const Vocabulary& vocab,
                                           TokenMode mode,
                                           const FrequencyTable& freq,
                                           const CooccurrenceTable& cooc,
                                           const KeywordConfig& config,
                                           Rng& rng) {
  return assemble_keywords(load_tags(tag_path), vocab, mode, freq, cooc,
                           config, rng);
}

}  // namespace poemgen
