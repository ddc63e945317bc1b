#pragma once

// Line and poem generation: bidirectional recursive growth from a seed,
// previous-line and whole-history conditioning, top-n sampled decoding, and
// fluency-driven regeneration.
//
// Both directions run the same loop over their own model: the backward
// model sees the line reversed, so each model extends toward its own END
// sentinel (the backward model's END is the natural line start). START and
// UNK are never emitted; a line therefore never contains a reserved id.

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "poemgen/lm.hpp"

namespace poemgen {

struct GenerationConfig {
  enum class Conditioning { none, previous_line, hierarchical };

  int max_line_len = 20;
  int top_n = 5;
  int max_attempts = 10;
  int num_lines = 4;
  std::uint64_t seed = 0;
  Conditioning conditioning = Conditioning::none;

  bool operator==(const GenerationConfig&) const = default;

  void validate() const {
    if (max_line_len < 1 || top_n < 1 || max_attempts < 1 || num_lines < 1)
      throw ConfigError("generation parameters must be positive");
  }
};

struct LineJudgment {
  bool pass = true;
  double score = 0.0;
  std::string detail;
};

// Accept/reject gate over a candidate line; an empty function accepts all.
using LineEvaluator = std::function<LineJudgment(const std::vector<TokenId>&)>;

struct GeneratedLine {
  std::vector<TokenId> tokens;
  std::vector<TokenId> seed_tokens;  // empty: forward continuation, no seed
  std::string growth;                // per-step trace, F = append, B = prepend
  int attempts = 1;
  bool kept_rejected = false;  // best rejected candidate kept after max tries
  LineJudgment judgment;
};

struct GeneratedPoem {
  std::vector<GeneratedLine> lines;
};

// ============================================================================
// Decoding primitives
// ============================================================================

// Samples among the n highest-probability tokens with renormalized weights;
// ties at the cut break toward the lowest id, so n = 1 is deterministic
// argmax.
inline TokenId sample_top_n(const NextTokenDistribution& dist, int n,
                            Rng& rng) {
  require(n >= 1, "top-n width must be >= 1");
  const auto size = static_cast<TokenId>(dist.size());
  require(size > 0, "empty distribution");
  n = std::min<int>(n, size);

  std::vector<TokenId> ids(static_cast<std::size_t>(size));
  std::iota(ids.begin(), ids.end(), 0);
  std::partial_sort(ids.begin(), ids.begin() + n, ids.end(),
                    [&](TokenId a, TokenId b) {
                      if (dist[a] != dist[b]) return dist[a] > dist[b];
                      return a < b;
                    });

  double total = 0.0;
  for (int i = 0; i < n; ++i) total += dist[ids[static_cast<std::size_t>(i)]];
  if (total <= 0.0) return ids[0];
  double u = uniform01(rng) * total;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += dist[ids[static_cast<std::size_t>(i)]];
    if (u < acc) return ids[static_cast<std::size_t>(i)];
  }
  return ids[static_cast<std::size_t>(n - 1)];
}

namespace detail {

// Zeroes the never-emitted ids and renormalizes. A distribution with all
// its mass on masked ids degenerates to certain END, which terminates the
// direction. mask_end forces a non-empty line on the first step of
// forward-only growth.
inline NextTokenDistribution mask_for_decoding(NextTokenDistribution dist,
                                               bool mask_end = false) {
  dist[kStartId] = 0.0;
  dist[kUnkId] = 0.0;
  if (mask_end) dist[kEndId] = 0.0;
  double sum = dist.sum();
  if (sum <= 0.0) {
    dist.setZero();
    dist[kEndId] = 1.0;
    return dist;
  }
  dist /= sum;
  return dist;
}

inline void check_seed(const std::vector<TokenId>& seed, TokenId vocab_size,
                       int max_line_len) {
  require(!seed.empty(), "seed keyword must be non-empty");
  for (TokenId t : seed) {
    if (t < 0 || t >= vocab_size)
      throw ContractError("seed token not in vocabulary");
    if (is_reserved(t))
      throw ContractError("seed token is a reserved sentinel");
  }
  require(static_cast<int>(seed.size()) <= max_line_len,
          "seed longer than the line length cap");
}

}  // namespace detail

// ============================================================================
// Line generation
// ============================================================================

// Grows a line outward from the seed: one forward append, one backward
// prepend per round, each direction stopping at its END; the length cap
// force-stops both. The condition vector, when present, is passed to every
// model call in both directions.
inline GeneratedLine recursive_generate(const ConditionalLm& fwd,
                                        const ConditionalLm& bwd,
                                        const std::vector<TokenId>& seed,
                                        const GenerationConfig& config,
                                        Rng& rng,
                                        const Eigen::VectorXd* condition = nullptr) {
  config.validate();
  require(fwd.vocab_size() == bwd.vocab_size(),
          "forward/backward vocabulary mismatch");
  detail::check_seed(seed, fwd.vocab_size(), config.max_line_len);

  GeneratedLine out;
  out.seed_tokens = seed;
  std::vector<TokenId>& seq = out.tokens;
  seq = seed;

  bool fwd_done = false, bwd_done = false;
  const auto cap = static_cast<std::size_t>(config.max_line_len);
  while (!(fwd_done && bwd_done)) {
    if (seq.size() >= cap) break;  // a seed at the cap grows nowhere
    if (!fwd_done) {
      auto dist = detail::mask_for_decoding(fwd.next_dist(seq, condition));
      TokenId t = sample_top_n(dist, config.top_n, rng);
      if (t == kEndId) {
        fwd_done = true;
      } else {
        seq.push_back(t);
        out.growth += 'F';
      }
      if (seq.size() >= cap) break;
    }
    if (!bwd_done) {
      std::vector<TokenId> rseq(seq.rbegin(), seq.rend());
      auto dist = detail::mask_for_decoding(bwd.next_dist(rseq, condition));
      TokenId t = sample_top_n(dist, config.top_n, rng);
      if (t == kEndId) {
        bwd_done = true;
      } else {
        seq.insert(seq.begin(), t);
        out.growth += 'B';
      }
      if (seq.size() >= cap) break;
    }
  }
  return out;
}

// Previous-line conditioning: the condition is the encoding of the line
// before this one, fed to every step of both directions.
inline GeneratedLine generate_with_preline(const ConditionalLm& fwd,
                                           const ConditionalLm& bwd,
                                           const SentenceEncoderBase& encoder,
                                           const std::vector<TokenId>& seed,
                                           const std::vector<TokenId>& previous,
                                           const GenerationConfig& config,
                                           Rng& rng) {
  require(fwd.condition_width() > 0 && bwd.condition_width() > 0,
          "previous-line generation needs condition-accepting models");
  Eigen::VectorXd condition = encode_sentence(encoder, previous);
  return recursive_generate(fwd, bwd, seed, config, rng, &condition);
}

// Whole-history conditioning: encode every previous line, advance the
// poem-level recurrence, and condition on its prediction. An empty history
// (first line) uses the recurrence's initial-state prediction.
inline GeneratedLine generate_hierarchical(
    const ConditionalLm& fwd, const ConditionalLm& bwd,
    const SentenceEncoderBase& encoder, const PoemStateBase& poem_state,
    const std::vector<TokenId>& seed,
    const std::vector<std::vector<TokenId>>& previous_lines,
    const GenerationConfig& config, Rng& rng) {
  require(fwd.condition_width() > 0 && bwd.condition_width() > 0,
          "hierarchical generation needs condition-accepting models");
  std::vector<Eigen::VectorXd> history;
  history.reserve(previous_lines.size());
  for (const auto& line : previous_lines)
    history.push_back(encode_sentence(encoder, line));
  Eigen::VectorXd condition = poem_state.advance(history);
  return recursive_generate(fwd, bwd, seed, config, rng, &condition);
}

// Forward-only growth from a bare start, no seed. Used when there are more
// lines than keywords. END is masked on the first step so the line is
// never empty. A null condition is allowed only for unconditioned models.
inline GeneratedLine generate_forward_only(const ConditionalLm& fwd,
                                           const GenerationConfig& config,
                                           Rng& rng,
                                           const Eigen::VectorXd* condition = nullptr) {
  config.validate();
  GeneratedLine out;
  std::vector<TokenId>& seq = out.tokens;
  const auto cap = static_cast<std::size_t>(config.max_line_len);
  while (seq.size() < cap) {
    auto dist = detail::mask_for_decoding(fwd.next_dist(seq, condition),
                                          /*mask_end=*/seq.empty());
    TokenId t = sample_top_n(dist, config.top_n, rng);
    if (t == kEndId) break;
    seq.push_back(t);
    out.growth += 'F';
  }
  return out;
}

// The conditioned form: continuation of a previous line.
inline GeneratedLine generate_forward_continuation(
    const ConditionalLm& fwd, const SentenceEncoderBase& encoder,
    const std::vector<TokenId>& previous, const GenerationConfig& config,
    Rng& rng) {
  require(fwd.condition_width() > 0,
          "forward continuation needs a condition-accepting model");
  Eigen::VectorXd condition = encode_sentence(encoder, previous);
  return generate_forward_only(fwd, config, rng, &condition);
}

// ============================================================================
// Poem orchestration
// ============================================================================

// Per-line plan: a seed keyword, or none (forward continuation).
struct LinePlan {
  std::vector<TokenId> seed;  // empty = continuation
};

struct GeneratorModels {
  const ConditionalLm* fwd = nullptr;
  const ConditionalLm* bwd = nullptr;
  const SentenceEncoderBase* encoder = nullptr;  // conditioning modes only
  const PoemStateBase* poem_state = nullptr;     // hierarchical mode only
};

// Generates each planned line in order, re-sampling up to max_attempts
// while the evaluator rejects; after that the best-scoring rejected
// candidate is kept and flagged. Conditioning always reads the lines
// actually kept.
inline GeneratedPoem generate_poem(const GeneratorModels& models,
                                   const std::vector<LinePlan>& plans,
                                   const LineEvaluator& evaluator,
                                   const GenerationConfig& config, Rng& rng) {
  config.validate();
  require(models.fwd != nullptr, "forward model required");
  require(!plans.empty(), "poem needs at least one planned line");
  using Conditioning = GenerationConfig::Conditioning;
  if (config.conditioning != Conditioning::none)
    require(models.encoder != nullptr, "conditioning requires an encoder");
  if (config.conditioning == Conditioning::hierarchical)
    require(models.poem_state != nullptr,
            "hierarchical conditioning requires a poem-state model");

  GeneratedPoem poem;
  for (const LinePlan& plan : plans) {
    const bool seeded = !plan.seed.empty();
    if (seeded) require(models.bwd != nullptr, "backward model required");

    auto generate_once = [&]() -> GeneratedLine {
      Eigen::VectorXd condition;
      bool conditioned = false;
      switch (config.conditioning) {
        case Conditioning::none:
          break;
        case Conditioning::previous_line:
          // First line of the poem: a zero vector stands for "no context".
          conditioned = true;
          if (poem.lines.empty())
            condition = Eigen::VectorXd::Zero(models.encoder->width());
          else
            condition =
                encode_sentence(*models.encoder, poem.lines.back().tokens);
          break;
        case Conditioning::hierarchical: {
          conditioned = true;
          std::vector<Eigen::VectorXd> history;
          for (const auto& line : poem.lines)
            history.push_back(encode_sentence(*models.encoder, line.tokens));
          condition = models.poem_state->advance(history);
          break;
        }
      }
      const Eigen::VectorXd* cond_ptr = conditioned ? &condition : nullptr;
      if (seeded)
        return recursive_generate(*models.fwd, *models.bwd, plan.seed, config,
                                  rng, cond_ptr);
      return generate_forward_only(*models.fwd, config, rng, cond_ptr);
    };

    GeneratedLine best;
    bool have_best = false;
    GeneratedLine kept;
    bool accepted = false;
    for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
      GeneratedLine candidate = generate_once();
      candidate.attempts = attempt;
      candidate.judgment =
          evaluator ? evaluator(candidate.tokens) : LineJudgment{};
      if (candidate.judgment.pass) {
        kept = std::move(candidate);
        accepted = true;
        break;
      }
      if (!have_best || candidate.judgment.score > best.judgment.score) {
        best = std::move(candidate);
        have_best = true;
      }
    }
    if (!accepted) {
      kept = std::move(best);
      kept.attempts = config.max_attempts;
      kept.kept_rejected = true;
    }
    poem.lines.push_back(std::move(kept));
  }
  return poem;
}

}  // namespace poemgen
