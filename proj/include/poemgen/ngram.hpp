#pragma once

// Exact count-based n-gram language model with additive smoothing.
//
// Counting: each line is padded with (order - 1) START tokens and closed
// with one END; every length-(order-1) context in that sequence counts its
// successor. Probabilities are (count + alpha) / (total + alpha * V) over
// the full vocabulary V. Convention, frozen here and mirrored by the test
// oracle: an unseen context with alpha = 0 yields the uniform distribution.

#include <istream>
#include <map>
#include <ostream>
#include <vector>

#include "poemgen/corpus.hpp"
#include "poemgen/lm.hpp"

namespace poemgen {

class NGramModel final : public ConditionalLm {
 public:
  struct ContextEntry {
    std::map<TokenId, std::int64_t> successor;
    std::int64_t total = 0;
  };
  using CountMap = std::map<std::vector<TokenId>, ContextEntry>;

  NGramModel(int order, Direction direction, double alpha, TokenId vocab_size)
      : order_(order),
        direction_(direction),
        alpha_(alpha),
        vocab_size_(vocab_size) {
    if (order < 1) throw ConfigError("n-gram order must be >= 1");
    if (alpha < 0) throw ConfigError("smoothing constant must be >= 0");
    require(vocab_size > kNumReserved, "vocabulary too small");
  }

  TokenId vocab_size() const override { return vocab_size_; }
  Direction direction() const override { return direction_; }
  int condition_width() const override { return 0; }
  int order() const { return order_; }
  double alpha() const { return alpha_; }
  const CountMap& counts() const { return counts_; }

  void observe_line(const Line& line) {
    std::vector<TokenId> seq(static_cast<std::size_t>(order_ - 1), kStartId);
    seq.insert(seq.end(), line.begin(), line.end());
    seq.push_back(kEndId);
    for (std::size_t i = static_cast<std::size_t>(order_ - 1); i < seq.size();
         ++i) {
      std::vector<TokenId> ctx(
          seq.begin() + static_cast<std::ptrdiff_t>(i - (order_ - 1)),
          seq.begin() + static_cast<std::ptrdiff_t>(i));
      ContextEntry& e = counts_[ctx];
      ++e.successor[seq[i]];
      ++e.total;
    }
  }

  void save(std::ostream& out) const {
    io::write_string(out, "poemgen-ngram");
    io::write_u32(out, 1);
    io::write_u32(out, static_cast<std::uint32_t>(order_));
    io::write_u8(out, direction_ == Direction::forward ? 0 : 1);
    io::write_f64(out, alpha_);
    io::write_u32(out, static_cast<std::uint32_t>(vocab_size_));
    io::write_u64(out, counts_.size());
    for (const auto& [ctx, entry] : counts_) {
      io::write_u64(out, ctx.size());
      for (TokenId t : ctx) io::write_u32(out, static_cast<std::uint32_t>(t));
      io::write_u64(out, entry.successor.size());
      for (const auto& [t, n] : entry.successor) {
        io::write_u32(out, static_cast<std::uint32_t>(t));
        io::write_i64(out, n);
      }
      io::write_i64(out, entry.total);
    }
  }

  static NGramModel load(std::istream& in) {
    if (io::read_string(in) != "poemgen-ngram")
      throw IoError("not an n-gram model file");
    if (io::read_u32(in) != 1) throw IoError("unsupported n-gram model version");
    int order = static_cast<int>(io::read_u32(in));
    Direction dir = io::read_u8(in) == 0 ? Direction::forward : Direction::backward;
    double alpha = io::read_f64(in);
    TokenId vocab = static_cast<TokenId>(io::read_u32(in));
    NGramModel model(order, dir, alpha, vocab);
    std::uint64_t n_ctx = io::read_u64(in);
    for (std::uint64_t c = 0; c < n_ctx; ++c) {
      std::vector<TokenId> ctx(io::read_u64(in));
      for (auto& t : ctx) t = static_cast<TokenId>(io::read_u32(in));
      ContextEntry entry;
      std::uint64_t n_succ = io::read_u64(in);
      for (std::uint64_t s = 0; s < n_succ; ++s) {
        TokenId t = static_cast<TokenId>(io::read_u32(in));
        entry.successor[t] = io::read_i64(in);
      }
      entry.total = io::read_i64(in);
      model.counts_[std::move(ctx)] = std::move(entry);
    }
    return model;
  }

 protected:
  NextTokenDistribution next_dist_impl(
      std::span<const TokenId> prefix,
      const Eigen::VectorXd* /*condition*/) const override {
    std::vector<TokenId> ctx(static_cast<std::size_t>(order_ - 1), kStartId);
    ctx.insert(ctx.end(), prefix.begin(), prefix.end());
    ctx.erase(ctx.begin(), ctx.end() - (order_ - 1));

    NextTokenDistribution dist(vocab_size_);
    auto it = counts_.find(ctx);
    if (it == counts_.end() || it->second.total == 0) {
      // Unseen context: uniform, both by convention (alpha = 0) and by the
      // smoothing formula (0 + a) / (0 + a V).
      dist.setConstant(1.0 / vocab_size_);
      return dist;
    }
    const ContextEntry& e = it->second;
    double denom = static_cast<double>(e.total) + alpha_ * vocab_size_;
    dist.setConstant(alpha_ / denom);
    for (const auto& [t, n] : e.successor)
      dist[t] = (static_cast<double>(n) + alpha_) / denom;
    return dist;
  }

 private:
  int order_;
  Direction direction_;
  double alpha_;
  TokenId vocab_size_;
  CountMap counts_;
};

// Backward models are trained on the reversed corpus; callers always pass
// the corpus in natural order.
inline NGramModel train_ngram(const Corpus& corpus, TokenId vocab_size,
                              int order, Direction direction, double alpha) {
  NGramModel model(order, direction, alpha, vocab_size);
  const bool backward = direction == Direction::backward;
  Corpus reversed;
  if (backward) reversed = reverse(corpus);
  const Corpus& source = backward ? reversed : corpus;
  for (const auto& poem : source.poems)
    for (const auto& line : poem) model.observe_line(line);
  return model;
}

inline NGramModel train_ngram(const Corpus& corpus, const Vocabulary& vocab,
                              int order, Direction direction, double alpha) {
  return train_ngram(corpus, vocab.size(), order, direction, alpha);
}

}  // namespace poemgen
