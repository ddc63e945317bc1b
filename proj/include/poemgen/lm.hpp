#pragma once

// The contract every language model family satisfies: a next-token
// distribution over the full vocabulary given a prefix and an optional
// conditioning vector.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "poemgen/common.hpp"

namespace poemgen {

// Dense probabilities over token ids; entries are >= 0 and sum to 1.
using NextTokenDistribution = Eigen::VectorXd;

class ConditionalLm {
 public:
  virtual ~ConditionalLm() = default;

  virtual TokenId vocab_size() const = 0;
  virtual Direction direction() const = 0;

  // Width of the accepted conditioning vector; 0 means unconditioned.
  virtual int condition_width() const = 0;

  // Stateless: the full prefix is consumed on every call. Deterministic
  // given (model, prefix, condition).
  NextTokenDistribution next_dist(std::span<const TokenId> prefix,
                                  const Eigen::VectorXd* condition = nullptr) const {
    if (condition != nullptr && condition_width() == 0)
      throw ContractError("condition supplied to an unconditioned model");
    if (condition == nullptr && condition_width() > 0)
      throw ContractError("conditioned model called without a condition");
    if (condition != nullptr && condition->size() != condition_width())
      throw ContractError("condition width mismatch");
    for (TokenId t : prefix)
      if (t < 0 || t >= vocab_size())
        throw ContractError("prefix token id out of range");
    return next_dist_impl(prefix, condition);
  }

 protected:
  virtual NextTokenDistribution next_dist_impl(
      std::span<const TokenId> prefix, const Eigen::VectorXd* condition) const = 0;
};

// Maps a non-empty token line to a fixed-width content vector.
class SentenceEncoderBase {
 public:
  virtual ~SentenceEncoderBase() = default;
  virtual int width() const = 0;
  virtual Eigen::VectorXd encode(std::span<const TokenId> line) const = 0;
};

// Recurrence over content vectors predicting the next line's content
// vector. An empty history yields the initial-state prediction (the
// convention for a poem's first line).
class PoemStateBase {
 public:
  virtual ~PoemStateBase() = default;
  virtual int width() const = 0;
  virtual Eigen::VectorXd advance(
      const std::vector<Eigen::VectorXd>& history) const = 0;
};

inline Eigen::VectorXd encode_sentence(const SentenceEncoderBase& encoder,
                                       std::span<const TokenId> line) {
  if (line.empty()) throw ContractError("cannot encode an empty line");
  Eigen::VectorXd v = encoder.encode(line);
  require(v.size() == encoder.width(), "encoder emitted wrong width");
  return v;
}

inline Eigen::VectorXd poem_state_advance(
    const PoemStateBase& model, const std::vector<Eigen::VectorXd>& history) {
  require(!history.empty(), "poem state needs at least one content vector");
  for (const auto& v : history)
    if (v.size() != model.width())
      throw ContractError("content vector width mismatch");
  Eigen::VectorXd out = model.advance(history);
  require(out.size() == model.width(), "poem state emitted wrong width");
  return out;
}

// Sum of log P(token | prefix) over the line plus the closing END. A
// zero-probability token yields -infinity rather than an exception.
inline double sequence_logprob(const ConditionalLm& model,
                               std::span<const TokenId> line,
                               const Eigen::VectorXd* condition = nullptr) {
  require(!line.empty(), "sequence_logprob needs a non-empty line");
  std::vector<TokenId> targets(line.begin(), line.end());
  targets.push_back(kEndId);
  std::vector<TokenId> prefix;
  double lp = 0.0;
  for (TokenId t : targets) {
    NextTokenDistribution dist = model.next_dist(prefix, condition);
    double p = dist[t];
    if (p <= 0.0) return -std::numeric_limits<double>::infinity();
    lp += std::log(p);
    prefix.push_back(t);
  }
  return lp;
}

}  // namespace poemgen
