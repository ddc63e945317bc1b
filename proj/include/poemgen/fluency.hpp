#pragma once

// Fluency evaluation: length-normalized n-gram score, skip-gram pairwise
// association, and a POS-sequence score under a recurrent tag model. The
// accept/reject verdict is the conjunction of the enabled checks.
//
// Conventions frozen here:
//   - skip-gram association: log((count(a,b)+alpha) * T / ((count(a)+alpha)
//     * (count(b)+alpha))) with alpha = 0.5 and T = total corpus token
//     count; counts aggregate over gaps 1..K_max
//   - lines shorter than two tokens auto-pass the skip-gram check with a
//     +infinity sentinel score
//   - thresholds are calibrated as score percentiles over a reference
//     slice: index floor(p * (n - 1) / 100) of the ascending sort

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "poemgen/corpus.hpp"
#include "poemgen/lm.hpp"
#include "poemgen/training.hpp"

namespace poemgen {

// ============================================================================
// Skip-gram statistics
// ============================================================================

inline constexpr double kSkipGramAlpha = 0.5;

// Ordered pair counts at every gap 1..k_max within a line, plus the unigram
// table of the same corpus for the association denominator.
struct SkipGramTable {
  int k_max = 3;
  std::map<std::tuple<TokenId, TokenId, int>, std::int64_t> count;
  FrequencyTable unigrams;

  std::int64_t at(TokenId a, TokenId b, int gap) const {
    auto it = count.find({a, b, gap});
    return it == count.end() ? 0 : it->second;
  }

  // Aggregated over gaps; this is the count the association score uses.
  std::int64_t pair_count(TokenId a, TokenId b) const {
    std::int64_t n = 0;
    for (int g = 1; g <= k_max; ++g) n += at(a, b, g);
    return n;
  }

  bool operator==(const SkipGramTable& o) const {
    return k_max == o.k_max && count == o.count && unigrams == o.unigrams;
  }
};

inline SkipGramTable build_skipgram(const Corpus& corpus, int k_max = 3) {
  if (k_max < 1) throw ConfigError("skip-gram gap bound must be >= 1");
  require(!corpus.poems.empty(), "skip-gram table needs a non-empty corpus");
  SkipGramTable table;
  table.k_max = k_max;
  table.unigrams = frequencies(corpus);
  for (const auto& poem : corpus.poems)
    for (const auto& line : poem)
      for (std::size_t i = 0; i < line.size(); ++i)
        for (int g = 1; g <= k_max; ++g) {
          std::size_t j = i + static_cast<std::size_t>(g);
          if (j >= line.size()) break;
          ++table.count[{line[i], line[j], g}];
        }
  return table;
}

inline void save_skipgram(std::ostream& out, const SkipGramTable& table) {
  io::write_string(out, "poemgen-skip");
  io::write_u32(out, 1);
  io::write_u32(out, static_cast<std::uint32_t>(table.k_max));
  io::write_u64(out, table.unigrams.count.size());
  for (std::int64_t c : table.unigrams.count) io::write_i64(out, c);
  io::write_i64(out, table.unigrams.total);
  io::write_u64(out, table.count.size());
  for (const auto& [key, c] : table.count) {
    io::write_u32(out, static_cast<std::uint32_t>(std::get<0>(key)));
    io::write_u32(out, static_cast<std::uint32_t>(std::get<1>(key)));
    io::write_u32(out, static_cast<std::uint32_t>(std::get<2>(key)));
    io::write_i64(out, c);
  }
}

inline SkipGramTable load_skipgram(std::istream& in) {
  if (io::read_string(in) != "poemgen-skip")
    throw IoError("not a skip-gram table file");
  if (io::read_u32(in) != 1) throw IoError("unsupported skip-gram version");
  SkipGramTable table;
  table.k_max = static_cast<int>(io::read_u32(in));
  std::uint64_t n = io::read_u64(in);
  table.unigrams.count.resize(n);
  for (std::uint64_t k = 0; k < n; ++k)
    table.unigrams.count[k] = io::read_i64(in);
  table.unigrams.total = io::read_i64(in);
  std::uint64_t pairs = io::read_u64(in);
  for (std::uint64_t k = 0; k < pairs; ++k) {
    TokenId a = static_cast<TokenId>(io::read_u32(in));
    TokenId b = static_cast<TokenId>(io::read_u32(in));
    int gap = static_cast<int>(io::read_u32(in));
    table.count[{a, b, gap}] = io::read_i64(in);
  }
  return table;
}

// ============================================================================
// Scores
// ============================================================================

// Mean per-token log-probability including the closing END: logprob of the
// sequence divided by (length + 1).
inline double score_ngram(const ConditionalLm& model,
                          std::span<const TokenId> line) {
  require(!line.empty(), "score_ngram needs a non-empty line");
  return sequence_logprob(model, line) /
         static_cast<double>(line.size() + 1);
}

// Smoothed pointwise association of one ordered pair.
inline double skipgram_association(const SkipGramTable& table, TokenId a,
                                   TokenId b) {
  double t = static_cast<double>(table.unigrams.total);
  double joint = static_cast<double>(table.pair_count(a, b)) + kSkipGramAlpha;
  double ca = static_cast<double>(table.unigrams.at(a)) + kSkipGramAlpha;
  double cb = static_cast<double>(table.unigrams.at(b)) + kSkipGramAlpha;
  return std::log(joint * t / (ca * cb));
}

// Mean association over all in-line ordered pairs with gap <= k_max.
// Lines shorter than two tokens auto-pass with +infinity.
inline double score_skipgram(const SkipGramTable& table,
                             std::span<const TokenId> line) {
  if (line.size() < 2) return std::numeric_limits<double>::infinity();
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < line.size(); ++i)
    for (int g = 1; g <= table.k_max; ++g) {
      std::size_t j = i + static_cast<std::size_t>(g);
      if (j >= line.size()) break;
      sum += skipgram_association(table, line[i], line[j]);
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

// ============================================================================
// POS tagging bridge
// ============================================================================

// Token id -> most frequent tag id over the aligned corpus; unseen tokens
// fall back to the UNK tag. Ties break toward the smaller tag id.
class PosTagLexicon {
 public:
  PosTagLexicon() = default;

  TokenId tag_of(TokenId token) const {
    if (token < 0 || static_cast<std::size_t>(token) >= map_.size())
      return kUnkId;
    return map_[static_cast<std::size_t>(token)];
  }

  std::size_t size() const { return map_.size(); }

  static PosTagLexicon build(const Corpus& tokens, const PosCorpus& pos,
                             TokenId vocab_size) {
    require(tokens.poems.size() == pos.tags.poems.size(),
            "token/tag corpus shape mismatch");
    std::map<std::pair<TokenId, TokenId>, std::int64_t> hits;
    for (std::size_t p = 0; p < tokens.poems.size(); ++p) {
      require(tokens.poems[p].size() == pos.tags.poems[p].size(),
              "token/tag corpus shape mismatch");
      for (std::size_t l = 0; l < tokens.poems[p].size(); ++l) {
        const Line& tok = tokens.poems[p][l];
        const Line& tag = pos.tags.poems[p][l];
        require(tok.size() == tag.size(), "token/tag line length mismatch");
        for (std::size_t i = 0; i < tok.size(); ++i)
          ++hits[{tok[i], tag[i]}];
      }
    }

    PosTagLexicon lex;
    lex.map_.assign(static_cast<std::size_t>(vocab_size), kUnkId);
    // hits is keyed (token, tag) ascending, so walking it keeps the
    // smallest tag id on count ties.
    std::map<TokenId, std::pair<TokenId, std::int64_t>> best;
    for (const auto& [key, n] : hits) {
      auto [token, tag] = key;
      auto it = best.find(token);
      if (it == best.end() || n > it->second.second)
        best[token] = {tag, n};
    }
    for (const auto& [token, choice] : best)
      if (token >= 0 && static_cast<std::size_t>(token) < lex.map_.size())
        lex.map_[static_cast<std::size_t>(token)] = choice.first;
    return lex;
  }

  void save(std::ostream& out) const {
    io::write_string(out, "poemgen-poslex");
    io::write_u32(out, 1);
    io::write_u64(out, map_.size());
    for (TokenId t : map_) io::write_u32(out, static_cast<std::uint32_t>(t));
  }

  static PosTagLexicon load(std::istream& in) {
    if (io::read_string(in) != "poemgen-poslex")
      throw IoError("not a tag lexicon file");
    if (io::read_u32(in) != 1) throw IoError("unsupported tag lexicon version");
    PosTagLexicon lex;
    std::uint64_t n = io::read_u64(in);
    lex.map_.resize(n);
    for (std::uint64_t k = 0; k < n; ++k)
      lex.map_[k] = static_cast<TokenId>(io::read_u32(in));
    return lex;
  }

  bool operator==(const PosTagLexicon& o) const { return map_ == o.map_; }

 private:
  std::vector<TokenId> map_;
};

// Trains an unconditioned recurrent LM over the tag vocabulary; the same
// training contract as the token-level trainer.
inline std::pair<RecurrentBundle, TrainResult> train_pos_lm(
    const PosCorpus& pos, const TrainConfig& config,
    const EpochCallback& on_epoch = {}) {
  return train_recurrent(pos.tags, pos.tag_vocab.size(), config,
                         Direction::forward, ConditioningSource::none,
                         on_epoch);
}

// Maps tokens to tags and scores the tag sequence: mean per-tag
// log-probability including END.
inline double score_pos(const ConditionalLm& pos_lm,
                        const PosTagLexicon& lexicon,
                        std::span<const TokenId> line) {
  require(!line.empty(), "score_pos needs a non-empty line");
  std::vector<TokenId> tags;
  tags.reserve(line.size());
  for (TokenId t : line) tags.push_back(lexicon.tag_of(t));
  return sequence_logprob(pos_lm, tags) / static_cast<double>(line.size() + 1);
}

// ============================================================================
// Verdicts
// ============================================================================

struct FluencyThresholds {
  bool use_ngram = true;
  double min_ngram = 0.0;
  bool use_skipgram = false;
  double min_skipgram = 0.0;
  bool use_pos = false;
  double min_pos = 0.0;

  bool operator==(const FluencyThresholds&) const = default;

  void validate() const {
    if (!use_ngram && !use_skipgram && !use_pos)
      throw ConfigError("at least one fluency check must be enabled");
    if (use_ngram && !std::isfinite(min_ngram))
      throw ConfigError("n-gram threshold must be finite");
    if (use_skipgram && !std::isfinite(min_skipgram))
      throw ConfigError("skip-gram threshold must be finite");
    if (use_pos && !std::isfinite(min_pos))
      throw ConfigError("POS threshold must be finite");
  }
};

struct FluencyScorers {
  const ConditionalLm* ngram = nullptr;
  const SkipGramTable* skipgram = nullptr;
  const ConditionalLm* pos_lm = nullptr;
  const PosTagLexicon* lexicon = nullptr;
};

struct FluencyReport {
  std::optional<double> ngram_score;
  std::optional<double> skipgram_score;
  std::optional<double> pos_score;
  bool ngram_pass = true;
  bool skipgram_pass = true;
  bool pos_pass = true;
  bool pass = false;
  std::string detail;  // names the checks that failed
};

// Scores are computed only for enabled checks; the verdict is their
// conjunction (inclusive thresholds).
inline FluencyReport evaluate(std::span<const TokenId> line,
                              const FluencyScorers& scorers,
                              const FluencyThresholds& thresholds) {
  thresholds.validate();
  FluencyReport report;
  if (thresholds.use_ngram) {
    require(scorers.ngram != nullptr, "n-gram check enabled without a model");
    report.ngram_score = score_ngram(*scorers.ngram, line);
    report.ngram_pass = *report.ngram_score >= thresholds.min_ngram;
    if (!report.ngram_pass) report.detail += "ngram ";
  }
  if (thresholds.use_skipgram) {
    require(scorers.skipgram != nullptr,
            "skip-gram check enabled without a table");
    report.skipgram_score = score_skipgram(*scorers.skipgram, line);
    report.skipgram_pass = *report.skipgram_score >= thresholds.min_skipgram;
    if (!report.skipgram_pass) report.detail += "skipgram ";
  }
  if (thresholds.use_pos) {
    require(scorers.pos_lm != nullptr && scorers.lexicon != nullptr,
            "POS check enabled without a model and lexicon");
    report.pos_score = score_pos(*scorers.pos_lm, *scorers.lexicon, line);
    report.pos_pass = *report.pos_score >= thresholds.min_pos;
    if (!report.pos_pass) report.detail += "pos ";
  }
  if (!report.detail.empty() && report.detail.back() == ' ')
    report.detail.pop_back();
  report.pass = report.ngram_pass && report.skipgram_pass && report.pos_pass;
  return report;
}

// ============================================================================
// Threshold calibration
// ============================================================================

// The p-th percentile as the value at index floor(p * (n - 1) / 100) of the
// ascending sort; at most floor(p * (n - 1) / 100) reference lines can
// score below the returned threshold.
inline double score_percentile(std::vector<double> scores, double percentile) {
  require(!scores.empty(), "percentile of an empty score list");
  require(percentile >= 0.0 && percentile <= 100.0,
          "percentile must be in [0, 100]");
  std::sort(scores.begin(), scores.end());
  auto idx = static_cast<std::size_t>(
      percentile * static_cast<double>(scores.size() - 1) / 100.0);
  return scores[idx];
}

// Fills the enabled thresholds with the given percentile of the reference
// lines' scores, so roughly (100 - p) percent of reference-like lines pass.
inline FluencyThresholds calibrate_thresholds(
    const std::vector<Line>& reference, const FluencyScorers& scorers,
    FluencyThresholds enabled, double percentile = 5.0) {
  require(!reference.empty(), "calibration needs reference lines");
  if (enabled.use_ngram) {
    require(scorers.ngram != nullptr, "n-gram check enabled without a model");
    std::vector<double> s;
    for (const Line& line : reference)
      s.push_back(score_ngram(*scorers.ngram, line));
    enabled.min_ngram = score_percentile(std::move(s), percentile);
  }
  if (enabled.use_skipgram) {
    require(scorers.skipgram != nullptr,
            "skip-gram check enabled without a table");
    std::vector<double> s;
    for (const Line& line : reference)
      s.push_back(score_skipgram(*scorers.skipgram, line));
    // The +infinity sentinel of sub-2-token lines would poison a high
    // percentile but never the low tail used here.
    enabled.min_skipgram = score_percentile(std::move(s), percentile);
  }
  if (enabled.use_pos) {
    require(scorers.pos_lm != nullptr && scorers.lexicon != nullptr,
            "POS check enabled without a model and lexicon");
    std::vector<double> s;
    for (const Line& line : reference)
      s.push_back(score_pos(*scorers.pos_lm, *scorers.lexicon, line));
    enabled.min_pos = score_percentile(std::move(s), percentile);
  }
  enabled.validate();
  return enabled;
}

}  // namespace poemgen
