#pragma once

// Training for the recurrent family: mean per-token NLL, full BPTT through
// the conditioning paths (encoder and poem-level recurrence included),
// global-norm gradient clipping, Adam, and a central finite-difference
// gradient check.
//
// Backward-direction models train on reversed target lines; context lines
// feeding the encoder stay in natural order, matching generation where one
// condition vector serves both directions.

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include "poemgen/corpus.hpp"
#include "poemgen/recurrent.hpp"

namespace poemgen {

// One independently differentiable unit. For previous-line conditioning
// the first line is context only (no loss); for poem-state conditioning
// the unit is a whole poem and every line is a target.
struct TrainUnit {
  std::vector<Line> lines;
  bool has_context = false;
};

inline std::vector<TrainUnit> make_units(const Corpus& corpus,
                                         ConditioningSource source) {
  std::vector<TrainUnit> units;
  switch (source) {
    case ConditioningSource::none:
      for (const auto& poem : corpus.poems)
        for (const auto& line : poem) units.push_back({{line}, false});
      break;
    case ConditioningSource::previous_line:
      for (const auto& poem : corpus.poems)
        for (std::size_t j = 0; j < poem.size(); ++j) {
          if (j == 0)
            units.push_back({{poem[j]}, false});
          else
            units.push_back({{poem[j - 1], poem[j]}, true});
        }
      break;
    case ConditioningSource::poem_state:
      for (const auto& poem : corpus.poems) units.push_back({poem, false});
      break;
  }
  return units;
}

inline std::size_t unit_target_tokens(const TrainUnit& unit,
                                      ConditioningSource source) {
  std::size_t n = 0;
  std::size_t first_target = source == ConditioningSource::previous_line &&
                                     unit.has_context
                                 ? 1
                                 : 0;
  if (source == ConditioningSource::poem_state) first_target = 0;
  for (std::size_t i = first_target; i < unit.lines.size(); ++i)
    n += unit.lines[i].size() + 1;  // END is a predicted token
  return n;
}

namespace train_detail {

using rnn::Matrix;
using rnn::StackCache;
using rnn::Vector;

// A zero-parameter copy of the bundle serves as the gradient store; the
// visitation order pairs every parameter with its gradient.
inline RecurrentBundle make_grads(RecurrentBundle& bundle) {
  RecurrentBundle grads = bundle;
  grads.visit([](const std::string&, Matrix& m) { m.setZero(); });
  return grads;
}

// Forward (+ optional backward) of the sentence LM over one target line.
// Returns the summed NLL of the line's targets. Gradient contributions are
// scaled by `scale` (1 / batch target tokens). dcond accumulates the
// condition gradient when conditioned.
inline double lm_line_pass(const RecurrentModel& lm, const Line& natural_line,
                           const Vector* cond, double scale, bool with_grads,
                           RecurrentModel* g, Vector* dcond) {
  Line tokens = natural_line;
  if (lm.direction() == Direction::backward)
    std::reverse(tokens.begin(), tokens.end());

  auto xs = lm.embed_with_start(tokens);
  StackCache cache;
  lm.stack.forward(xs, cond, cache);

  std::vector<TokenId> targets = tokens;
  targets.push_back(kEndId);

  double nll = 0.0;
  std::vector<Vector> dh_top;
  if (with_grads) dh_top.assign(xs.size(), Vector());

  for (std::size_t t = 0; t < targets.size(); ++t) {
    const Vector& h = lm.stack.top_h(cache, t);
    Vector logits = lm.logits_from_h(h);
    NextTokenDistribution p = RecurrentModel::softmax(logits);
    double prob = p[targets[t]];
    nll -= std::log(std::max(prob, 1e-300));
    if (with_grads) {
      Vector dlogits = p * scale;
      dlogits[targets[t]] -= scale;
      g->W_out.noalias() += dlogits * h.transpose();
      g->b_out.col(0) += dlogits;
      dh_top[t] = lm.W_out.transpose() * dlogits;
    }
  }

  if (with_grads) {
    std::vector<Vector> dx;
    lm.stack.backward(cache, cond, dh_top, g->stack, &dx, dcond);
    g->E.row(kStartId) += dx[0].transpose();
    for (std::size_t k = 1; k < dx.size(); ++k)
      g->E.row(tokens[k - 1]) += dx[k].transpose();
  }
  return nll;
}

struct EncoderRun {
  StackCache cache;
  Vector content;
};

inline EncoderRun encoder_forward(const SentenceEncoder& enc,
                                  const Line& line) {
  EncoderRun run;
  auto xs = enc.embed(line);
  enc.stack.forward(xs, nullptr, run.cache);
  run.content = enc.stack.top_h(run.cache, xs.size() - 1);
  return run;
}

inline void encoder_backward(const SentenceEncoder& enc, const Line& line,
                             const EncoderRun& run, const Vector& dcontent,
                             SentenceEncoder* g) {
  std::vector<Vector> dh_top(line.size(), Vector());
  dh_top.back() = dcontent;
  std::vector<Vector> dx;
  enc.stack.backward(run.cache, nullptr, dh_top, g->stack, &dx, nullptr);
  for (std::size_t k = 0; k < line.size(); ++k)
    g->E.row(line[k]) += dx[k].transpose();
}

// Full pass over one unit. Adds NLL over the unit's targets; gradients
// accumulate into `grads` when non-null.
inline double unit_pass(RecurrentBundle& bundle, const TrainUnit& unit,
                        double scale, RecurrentBundle* grads) {
  const bool with_grads = grads != nullptr;
  switch (bundle.source) {
    case ConditioningSource::none: {
      double nll = 0.0;
      for (const auto& line : unit.lines)
        nll += lm_line_pass(bundle.lm, line, nullptr, scale, with_grads,
                            with_grads ? &grads->lm : nullptr, nullptr);
      return nll;
    }
    case ConditioningSource::previous_line: {
      const Line& target = unit.has_context ? unit.lines[1] : unit.lines[0];
      if (!unit.has_context) {
        // First line of a poem: "no context" is the zero vector.
        Vector zero = Vector::Zero(bundle.config.d_enc);
        Vector dcond = Vector::Zero(bundle.config.d_enc);
        return lm_line_pass(bundle.lm, target, &zero, scale, with_grads,
                            with_grads ? &grads->lm : nullptr,
                            with_grads ? &dcond : nullptr);
      }
      EncoderRun run = encoder_forward(bundle.encoder, unit.lines[0]);
      Vector dcond = Vector::Zero(bundle.config.d_enc);
      double nll = lm_line_pass(bundle.lm, target, &run.content, scale,
                                with_grads, with_grads ? &grads->lm : nullptr,
                                with_grads ? &dcond : nullptr);
      if (with_grads)
        encoder_backward(bundle.encoder, unit.lines[0], run, dcond,
                         &grads->encoder);
      return nll;
    }
    case ConditioningSource::poem_state: {
      const auto& lines = unit.lines;
      const std::size_t k = lines.size();

      // Encode lines 1..k-1; line k's encoding would never be consumed.
      std::vector<EncoderRun> enc_runs;
      std::vector<Vector> contents;
      for (std::size_t i = 0; i + 1 < k; ++i) {
        enc_runs.push_back(encoder_forward(bundle.encoder, lines[i]));
        contents.push_back(enc_runs.back().content);
      }

      StackCache poem_cache;
      if (!contents.empty())
        bundle.poem_state.stack.forward(contents, nullptr, poem_cache);

      const int d_enc = bundle.config.d_enc;
      double nll = 0.0;
      std::vector<Vector> dh_poem(contents.size(), Vector());
      for (std::size_t j = 0; j < k; ++j) {
        Vector h_prev = j == 0 ? Vector(Vector::Zero(d_enc))
                               : bundle.poem_state.stack.top_h(poem_cache, j - 1);
        Vector cond = bundle.poem_state.predict_from_h(h_prev);
        Vector dcond = Vector::Zero(d_enc);
        nll += lm_line_pass(bundle.lm, lines[j], &cond, scale, with_grads,
                            with_grads ? &grads->lm : nullptr,
                            with_grads ? &dcond : nullptr);
        if (with_grads) {
          grads->poem_state.P.noalias() += dcond * h_prev.transpose();
          grads->poem_state.p.col(0) += dcond;
          if (j > 0) {
            Vector dh = bundle.poem_state.P.transpose() * dcond;
            if (dh_poem[j - 1].size() == 0)
              dh_poem[j - 1] = dh;
            else
              dh_poem[j - 1] += dh;
          }
        }
      }

      if (with_grads && !contents.empty()) {
        std::vector<Vector> dcontents;
        bundle.poem_state.stack.backward(poem_cache, nullptr, dh_poem,
                                         grads->poem_state.stack, &dcontents,
                                         nullptr);
        for (std::size_t i = 0; i < enc_runs.size(); ++i)
          encoder_backward(bundle.encoder, lines[i], enc_runs[i], dcontents[i],
                           &grads->encoder);
      }
      return nll;
    }
  }
  return 0.0;
}

// ==========================================================================
// Optimizer
// ==========================================================================

struct AdamState {
  std::map<std::string, std::pair<Matrix, Matrix>> moments;  // m, v
  long long step = 0;
};

inline double global_grad_norm(RecurrentBundle& grads) {
  double sq = 0.0;
  grads.visit(
      [&](const std::string&, Matrix& m) { sq += m.squaredNorm(); });
  return std::sqrt(sq);
}

inline void clip_gradients(RecurrentBundle& grads, double clip_norm) {
  double norm = global_grad_norm(grads);
  if (norm > clip_norm && norm > 0.0) {
    double factor = clip_norm / norm;
    grads.visit([&](const std::string&, Matrix& m) { m *= factor; });
  }
}

inline void adam_step(RecurrentBundle& bundle, RecurrentBundle& grads,
                      AdamState& state, const TrainConfig& config) {
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  // Walk both bundles in the shared visitation order.
  std::vector<Matrix*> params;
  bundle.visit([&](const std::string&, Matrix& m) { params.push_back(&m); });
  std::vector<std::pair<std::string, Matrix*>> gs;
  grads.visit([&](const std::string& name, Matrix& m) {
    gs.emplace_back(name, &m);
  });
  require(params.size() == gs.size(), "parameter/gradient walk mismatch");

  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::string& name = gs[k].first;
    Matrix& theta = *params[k];
    Matrix& g = *gs[k].second;
    auto it = state.moments.find(name);
    if (it == state.moments.end())
      it = state.moments
               .emplace(name, std::make_pair(Matrix::Zero(g.rows(), g.cols()),
                                             Matrix::Zero(g.rows(), g.cols())))
               .first;
    Matrix& m = it->second.first;
    Matrix& v = it->second.second;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    Matrix mhat = m / bc1;
    Matrix vhat = v / bc2;
    theta.array() -=
        config.learning_rate * mhat.array() /
        (vhat.array().sqrt() + config.adam_eps);
  }
}

}  // namespace train_detail

// ============================================================================
// Evaluation
// ============================================================================

// Clean full pass: mean per-token negative log likelihood over all targets.
inline double eval_loss(RecurrentBundle& bundle,
                        const std::vector<TrainUnit>& units) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& unit : units) {
    nll += train_detail::unit_pass(bundle, unit, 0.0, nullptr);
    tokens += unit_target_tokens(unit, bundle.source);
  }
  require(tokens > 0, "no target tokens to evaluate");
  return nll / static_cast<double>(tokens);
}

inline double perplexity(RecurrentBundle& bundle,
                         const std::vector<TrainUnit>& units) {
  return std::exp(eval_loss(bundle, units));
}

// ============================================================================
// Training loop
// ============================================================================

struct TrainResult {
  std::vector<double> epoch_losses;  // mean per-token NLL per epoch
  double final_loss = 0.0;           // clean full-dataset pass after training
};

using EpochCallback = std::function<void(int epoch, double loss)>;

inline TrainResult train_bundle(RecurrentBundle& bundle, const Corpus& corpus,
                                const EpochCallback& on_epoch = {}) {
  const TrainConfig& config = bundle.config;
  config.validate();
  require(!corpus.poems.empty(), "training corpus is empty");

  std::vector<TrainUnit> units = make_units(corpus, bundle.source);
  require(!units.empty(), "no training units");

  RecurrentBundle grads = train_detail::make_grads(bundle);
  train_detail::AdamState adam;
  Rng shuffle_rng(derive_seed(config.seed, 0x73687566));  // shuffle stream

  std::vector<std::size_t> order(units.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with our own rng: std::shuffle is not portable.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng() % i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    const std::size_t B = static_cast<std::size_t>(config.batch_size);
    int batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += B, ++batch_index) {
      std::size_t end = std::min(begin + B, order.size());

      std::size_t batch_tokens = 0;
      for (std::size_t k = begin; k < end; ++k)
        batch_tokens += unit_target_tokens(units[order[k]], bundle.source);
      double scale = 1.0 / static_cast<double>(batch_tokens);

      grads.visit([](const std::string&, rnn::Matrix& m) { m.setZero(); });
      double batch_nll = 0.0;
      for (std::size_t k = begin; k < end; ++k)
        batch_nll +=
            train_detail::unit_pass(bundle, units[order[k]], scale, &grads);

      double batch_loss = batch_nll * scale;
      if (!std::isfinite(batch_loss))
        throw TrainError("training diverged at epoch " +
                         std::to_string(epoch + 1) + ", batch " +
                         std::to_string(batch_index + 1));

      train_detail::clip_gradients(grads, config.clip_norm);
      train_detail::adam_step(bundle, grads, adam, config);

      epoch_nll += batch_nll;
      epoch_tokens += batch_tokens;
    }

    double epoch_loss = epoch_nll / static_cast<double>(epoch_tokens);
    result.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch + 1, epoch_loss);
  }

  result.final_loss = eval_loss(bundle, units);
  return result;
}

// Builds, initializes, and trains a bundle in one call.
inline std::pair<RecurrentBundle, TrainResult> train_recurrent(
    const Corpus& corpus, TokenId vocab_size, const TrainConfig& config,
    Direction direction, ConditioningSource source,
    const EpochCallback& on_epoch = {}) {
  RecurrentBundle bundle = make_bundle(vocab_size, config, direction, source);
  TrainResult result = train_bundle(bundle, corpus, on_epoch);
  return {std::move(bundle), std::move(result)};
}

// ============================================================================
// Gradient verification
// ============================================================================

struct GradientCheckReport {
  double max_rel_error = 0.0;
  int probes = 0;
  std::map<std::string, double> per_block;  // block name -> max rel error
};

// Compares analytic gradients against central finite differences on a
// random subset of scalar parameters covering every block. Relative error
// uses denominator max(|analytic|, |numeric|, 1e-3), so small gradients
// are held to a strict absolute bound instead of an unstable ratio.
inline GradientCheckReport gradient_check(RecurrentBundle& bundle,
                                          const std::vector<TrainUnit>& units,
                                          double eps = 1e-4,
                                          int min_probes = 200,
                                          std::uint64_t seed = 1) {
  require(!units.empty(), "gradient check needs a non-empty batch");

  std::size_t total_tokens = 0;
  for (const auto& u : units)
    total_tokens += unit_target_tokens(u, bundle.source);
  const double scale = 1.0 / static_cast<double>(total_tokens);

  auto loss_fn = [&]() {
    double nll = 0.0;
    for (const auto& u : units)
      nll += train_detail::unit_pass(bundle, u, 0.0, nullptr);
    double loss = nll * scale;
    if (!std::isfinite(loss)) throw TrainError("non-finite loss during check");
    return loss;
  };

  RecurrentBundle grads = train_detail::make_grads(bundle);
  for (const auto& u : units)
    train_detail::unit_pass(bundle, u, scale, &grads);

  std::vector<std::pair<std::string, rnn::Matrix*>> params;
  bundle.visit([&](const std::string& name, rnn::Matrix& m) {
    params.emplace_back(name, &m);
  });
  std::vector<rnn::Matrix*> gmats;
  grads.visit([&](const std::string&, rnn::Matrix& m) { gmats.push_back(&m); });

  const int per_block = std::max(
      2, static_cast<int>((min_probes + params.size() - 1) / params.size()));

  GradientCheckReport report;
  Rng rng(derive_seed(seed, 0x67726164));  // probe stream
  for (std::size_t b = 0; b < params.size(); ++b) {
    const std::string& name = params[b].first;
    rnn::Matrix& theta = *params[b].second;
    rnn::Matrix& g = *gmats[b];
    double block_max = 0.0;
    for (int probe = 0; probe < per_block; ++probe) {
      Eigen::Index idx = static_cast<Eigen::Index>(
          rng() % static_cast<std::uint64_t>(theta.size()));
      double saved = theta.data()[idx];
      theta.data()[idx] = saved + eps;
      double up = loss_fn();
      theta.data()[idx] = saved - eps;
      double down = loss_fn();
      theta.data()[idx] = saved;

      double numeric = (up - down) / (2.0 * eps);
      double analytic = g.data()[idx];
      double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      double rel = std::abs(analytic - numeric) / denom;
      block_max = std::max(block_max, rel);
      ++report.probes;
    }
    report.per_block[name] = block_max;
    report.max_rel_error = std::max(report.max_rel_error, block_max);
  }
  return report;
}

}  // namespace poemgen
