#pragma once

// Recurrent model family: a stacked LSTM language model with an optional
// conditioning input, a sentence encoder producing fixed-width content
// vectors, and a poem-level recurrence predicting the next line's content
// vector. Training lives in training.hpp; this header holds parameters,
// the forward pass, backpropagation through time, and serialization.
//
// Conventions frozen here:
//   - gate order inside fused preactivations is [input, forget, cell, output]
//   - the condition vector enters layer 0 only, as an additive term C * ctx
//     on the preactivation (equivalent to concatenating it to the input)
//   - weights init uniform(-0.08, 0.08); biases zero except forget gate = 1
//   - the language model feeds [START] + prefix and predicts from the last
//     hidden state; the encoder's content vector is its final hidden state

#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "poemgen/lm.hpp"

namespace poemgen {

enum class ConditioningSource { none, previous_line, poem_state };

inline const char* to_string(ConditioningSource s) {
  switch (s) {
    case ConditioningSource::none: return "none";
    case ConditioningSource::previous_line: return "previous-line";
    default: return "poem-state";
  }
}

struct TrainConfig {
  int d_emb = 32;
  int hidden = 64;
  int layers = 1;
  int d_enc = 16;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  int batch_size = 128;
  int epochs = 100;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (d_emb < 1 || hidden < 1 || layers < 1 || d_enc < 1)
      throw ConfigError("model dimensions must be positive");
    if (learning_rate <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 ||
        beta2 >= 1 || adam_eps <= 0 || clip_norm <= 0)
      throw ConfigError("optimizer settings out of range");
    if (batch_size < 1 || epochs < 1)
      throw ConfigError("batch size and epoch count must be positive");
  }

  // Reference configuration at published scale; accepted but far too slow
  // for the test suite, so it is never exercised there.
  static TrainConfig paper_scale() {
    TrainConfig c;
    c.d_emb = 256;
    c.hidden = 1024;
    c.layers = 3;
    c.d_enc = 64;
    c.batch_size = 128;
    return c;
  }
};

namespace rnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Visitor over named parameter matrices; models and their gradient twins
// enumerate in identical order.
using ParamVisitor = std::function<void(const std::string&, Matrix&)>;

struct LstmLayer {
  Matrix W;  // 4H x input
  Matrix U;  // 4H x H
  Matrix C;  // 4H x d_ctx; 0x0 when the layer takes no condition
  Matrix b;  // 4H x 1

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".W", W);
    fn(prefix + ".U", U);
    if (C.size() > 0) fn(prefix + ".C", C);
    fn(prefix + ".b", b);
  }
};

struct StepCache {
  Vector x;  // layer input at this step
  Vector i, f, g, o, c, tanh_c, h;
};

// cache[layer][step]
using StackCache = std::vector<std::vector<StepCache>>;

// Stacked LSTM over a sequence of input vectors. The condition, when
// present, is applied at layer 0 of every step.
struct LstmStack {
  int input_dim = 0;
  int hidden = 0;
  int num_layers = 1;
  int d_ctx = 0;
  std::vector<LstmLayer> layers;

  void build(int input_dim_, int hidden_, int num_layers_, int d_ctx_) {
    input_dim = input_dim_;
    hidden = hidden_;
    num_layers = num_layers_;
    d_ctx = d_ctx_;
    layers.resize(static_cast<std::size_t>(num_layers));
    for (int l = 0; l < num_layers; ++l) {
      int in = l == 0 ? input_dim : hidden;
      LstmLayer& layer = layers[static_cast<std::size_t>(l)];
      layer.W.setZero(4 * hidden, in);
      layer.U.setZero(4 * hidden, hidden);
      layer.b.setZero(4 * hidden, 1);
      if (l == 0 && d_ctx > 0) layer.C.setZero(4 * hidden, d_ctx);
    }
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l)
      layers[l].visit(prefix + ".layer" + std::to_string(l), fn);
  }

  void zero_params() {
    visit("", [](const std::string&, Matrix& m) { m.setZero(); });
  }

  // Runs the whole sequence, filling the cache. Returns nothing; the top
  // layer's h per step lives in cache.back().
  void forward(const std::vector<Vector>& inputs, const Vector* condition,
               StackCache& cache) const {
    const std::size_t T = inputs.size();
    const int H = hidden;
    cache.assign(static_cast<std::size_t>(num_layers), {});
    for (auto& per_layer : cache) per_layer.resize(T);

    for (std::size_t t = 0; t < T; ++t) {
      Vector x = inputs[t];
      for (int l = 0; l < num_layers; ++l) {
        const LstmLayer& layer = layers[static_cast<std::size_t>(l)];
        StepCache& sc = cache[static_cast<std::size_t>(l)][t];
        const Vector& h_prev =
            t > 0 ? cache[static_cast<std::size_t>(l)][t - 1].h
                  : Vector(Vector::Zero(H));
        const Vector& c_prev =
            t > 0 ? cache[static_cast<std::size_t>(l)][t - 1].c
                  : Vector(Vector::Zero(H));

        Vector a = layer.W * x + layer.U * h_prev + layer.b.col(0);
        if (l == 0 && layer.C.size() > 0) {
          require(condition != nullptr, "stack built with a condition input");
          a += layer.C * *condition;
        }

        sc.x = x;
        sc.i.resize(H);
        sc.f.resize(H);
        sc.g.resize(H);
        sc.o.resize(H);
        for (int k = 0; k < H; ++k) {
          sc.i[k] = sigmoid(a[k]);
          sc.f[k] = sigmoid(a[H + k]);
          sc.g[k] = std::tanh(a[2 * H + k]);
          sc.o[k] = sigmoid(a[3 * H + k]);
        }
        sc.c = sc.f.cwiseProduct(c_prev) + sc.i.cwiseProduct(sc.g);
        sc.tanh_c = sc.c.array().tanh().matrix();
        sc.h = sc.o.cwiseProduct(sc.tanh_c);
        x = sc.h;
      }
    }
  }

  const Vector& top_h(const StackCache& cache, std::size_t step) const {
    return cache.back()[step].h;
  }

  // Backpropagation through time. dh_top[t] is the externally injected
  // gradient at the top layer's hidden state of step t (zero-size vectors
  // mean none). Gradients accumulate into `grads` (same shapes as *this).
  // dx, when non-null, receives gradients w.r.t. the inputs; dcond, when
  // non-null, accumulates the condition gradient.
  void backward(const StackCache& cache, const Vector* condition,
                const std::vector<Vector>& dh_top, LstmStack& grads,
                std::vector<Vector>* dx, Vector* dcond) const {
    const std::size_t T = cache.empty() ? 0 : cache[0].size();
    const int H = hidden;
    if (dx != nullptr) dx->assign(T, Vector());

    std::vector<Vector> dh_ext(T);
    for (std::size_t t = 0; t < T; ++t)
      dh_ext[t] = dh_top.size() > t && dh_top[t].size() > 0
                      ? dh_top[t]
                      : Vector(Vector::Zero(H));

    for (int l = num_layers - 1; l >= 0; --l) {
      const LstmLayer& layer = layers[static_cast<std::size_t>(l)];
      LstmLayer& g = grads.layers[static_cast<std::size_t>(l)];
      const auto& steps = cache[static_cast<std::size_t>(l)];

      std::vector<Vector> dx_layer(T);
      Vector dh_next = Vector::Zero(H);
      Vector dc_next = Vector::Zero(H);
      for (std::size_t ti = T; ti-- > 0;) {
        const StepCache& sc = steps[ti];
        Vector dh = dh_ext[ti] + dh_next;
        Vector dc = dh.cwiseProduct(sc.o).cwiseProduct(
                        (1.0 - sc.tanh_c.array().square()).matrix()) +
                    dc_next;
        const Vector& c_prev =
            ti > 0 ? steps[ti - 1].c : Vector(Vector::Zero(H));
        const Vector& h_prev =
            ti > 0 ? steps[ti - 1].h : Vector(Vector::Zero(H));

        Vector da(4 * H);
        // d/da of sigmoid is s(1-s); of tanh is 1-v^2.
        da.segment(0, H) =
            dc.cwiseProduct(sc.g).cwiseProduct(sc.i).cwiseProduct(
                (1.0 - sc.i.array()).matrix());
        da.segment(H, H) =
            dc.cwiseProduct(c_prev).cwiseProduct(sc.f).cwiseProduct(
                (1.0 - sc.f.array()).matrix());
        da.segment(2 * H, H) =
            dc.cwiseProduct(sc.i).cwiseProduct(
                (1.0 - sc.g.array().square()).matrix());
        da.segment(3 * H, H) =
            dh.cwiseProduct(sc.tanh_c).cwiseProduct(sc.o).cwiseProduct(
                (1.0 - sc.o.array()).matrix());

        g.W.noalias() += da * sc.x.transpose();
        g.U.noalias() += da * h_prev.transpose();
        g.b.col(0) += da;
        if (l == 0 && layer.C.size() > 0) {
          g.C.noalias() += da * condition->transpose();
          if (dcond != nullptr) dcond->noalias() += layer.C.transpose() * da;
        }

        dx_layer[ti] = layer.W.transpose() * da;
        dh_next = layer.U.transpose() * da;
        dc_next = dc.cwiseProduct(sc.f);
      }

      if (l > 0) {
        dh_ext = std::move(dx_layer);  // feeds the layer below
      } else if (dx != nullptr) {
        *dx = std::move(dx_layer);
      }
    }
  }
};

// Deterministic parameter init: weights uniform in (-range, range) drawn in
// visitation order, biases zero with the forget-gate slice set to one.
inline void fill_uniform(Matrix& m, Rng& rng, double range) {
  double* p = m.data();
  for (Eigen::Index k = 0; k < m.size(); ++k)
    p[k] = (uniform01(rng) * 2.0 - 1.0) * range;
}

inline void init_stack(LstmStack& stack, Rng& rng, double range = 0.08) {
  for (auto& layer : stack.layers) {
    fill_uniform(layer.W, rng, range);
    fill_uniform(layer.U, rng, range);
    if (layer.C.size() > 0) fill_uniform(layer.C, rng, range);
    layer.b.setZero();
    layer.b.col(0).segment(stack.hidden, stack.hidden).setOnes();
  }
}

}  // namespace rnn

// ============================================================================
// Sentence-level language model
// ============================================================================

class RecurrentModel final : public ConditionalLm {
 public:
  RecurrentModel() = default;
  RecurrentModel(TokenId vocab, int d_emb, int hidden, int layers, int d_ctx,
                 Direction dir)
      : vocab_(vocab), d_ctx_(d_ctx), direction_(dir) {
    require(vocab > kNumReserved, "vocabulary too small");
    E.setZero(vocab, d_emb);
    stack.build(d_emb, hidden, layers, d_ctx);
    W_out.setZero(vocab, hidden);
    b_out.setZero(vocab, 1);
  }

  TokenId vocab_size() const override { return vocab_; }
  Direction direction() const override { return direction_; }
  int condition_width() const override { return d_ctx_; }
  int embedding_dim() const { return static_cast<int>(E.cols()); }
  int hidden_dim() const { return stack.hidden; }
  int layer_count() const { return stack.num_layers; }

  void init(Rng& rng) {
    rnn::fill_uniform(E, rng, 0.08);
    rnn::init_stack(stack, rng);
    rnn::fill_uniform(W_out, rng, 0.08);
    b_out.setZero();
  }

  void visit(const std::string& prefix, const rnn::ParamVisitor& fn) {
    fn(prefix + ".embedding", E);
    stack.visit(prefix, fn);
    fn(prefix + ".out.W", W_out);
    fn(prefix + ".out.b", b_out);
  }

  // Embeds [START] + tokens.
  std::vector<rnn::Vector> embed_with_start(std::span<const TokenId> tokens) const {
    std::vector<rnn::Vector> xs;
    xs.reserve(tokens.size() + 1);
    xs.push_back(E.row(kStartId).transpose());
    for (TokenId t : tokens) xs.push_back(E.row(t).transpose());
    return xs;
  }

  rnn::Vector logits_from_h(const rnn::Vector& h) const {
    return W_out * h + b_out.col(0);
  }

  static NextTokenDistribution softmax(const rnn::Vector& logits) {
    rnn::Vector z = (logits.array() - logits.maxCoeff()).matrix();
    NextTokenDistribution p = z.array().exp().matrix();
    p /= p.sum();
    return p;
  }

  rnn::Matrix E;      // vocab x d_emb
  rnn::LstmStack stack;
  rnn::Matrix W_out;  // vocab x hidden
  rnn::Matrix b_out;  // vocab x 1

 protected:
  NextTokenDistribution next_dist_impl(
      std::span<const TokenId> prefix,
      const Eigen::VectorXd* condition) const override {
    auto xs = embed_with_start(prefix);
    rnn::StackCache cache;
    stack.forward(xs, condition, cache);
    return softmax(logits_from_h(stack.top_h(cache, xs.size() - 1)));
  }

 private:
  TokenId vocab_ = 0;
  int d_ctx_ = 0;
  Direction direction_ = Direction::forward;
};

// ============================================================================
// Sentence encoder
// ============================================================================

// One-layer LSTM over its own embeddings; the content vector is the final
// hidden state, so the content width equals the encoder's hidden width.
class SentenceEncoder final : public SentenceEncoderBase {
 public:
  SentenceEncoder() = default;
  SentenceEncoder(TokenId vocab, int d_emb, int d_enc) : vocab_(vocab) {
    E.setZero(vocab, d_emb);
    stack.build(d_emb, d_enc, 1, 0);
  }

  int width() const override { return stack.hidden; }

  void init(Rng& rng) {
    rnn::fill_uniform(E, rng, 0.08);
    rnn::init_stack(stack, rng);
  }

  void visit(const std::string& prefix, const rnn::ParamVisitor& fn) {
    fn(prefix + ".embedding", E);
    stack.visit(prefix, fn);
  }

  std::vector<rnn::Vector> embed(std::span<const TokenId> line) const {
    std::vector<rnn::Vector> xs;
    xs.reserve(line.size());
    for (TokenId t : line) {
      require(t >= 0 && t < vocab_, "encoder token id out of range");
      xs.push_back(E.row(t).transpose());
    }
    return xs;
  }

  Eigen::VectorXd encode(std::span<const TokenId> line) const override {
    if (line.empty()) throw ContractError("cannot encode an empty line");
    auto xs = embed(line);
    rnn::StackCache cache;
    stack.forward(xs, nullptr, cache);
    return stack.top_h(cache, xs.size() - 1);
  }

  TokenId vocab() const { return vocab_; }

  rnn::Matrix E;
  rnn::LstmStack stack;

 private:
  TokenId vocab_ = 0;
};

// ============================================================================
// Poem-level state model
// ============================================================================

// One-layer LSTM over content vectors; the prediction head maps the hidden
// state after j-1 lines to the expected content vector of line j. An empty
// history predicts from the zero initial state, i.e. the bias.
class PoemStateModel final : public PoemStateBase {
 public:
  PoemStateModel() = default;
  explicit PoemStateModel(int d_enc) {
    stack.build(d_enc, d_enc, 1, 0);
    P.setZero(d_enc, d_enc);
    p.setZero(d_enc, 1);
  }

  int width() const override { return stack.hidden; }

  void init(Rng& rng) {
    rnn::init_stack(stack, rng);
    rnn::fill_uniform(P, rng, 0.08);
    p.setZero();
  }

  void visit(const std::string& prefix, const rnn::ParamVisitor& fn) {
    stack.visit(prefix, fn);
    fn(prefix + ".head.P", P);
    fn(prefix + ".head.b", p);
  }

  rnn::Vector predict_from_h(const rnn::Vector& h) const {
    return P * h + p.col(0);
  }

  Eigen::VectorXd advance(
      const std::vector<Eigen::VectorXd>& history) const override {
    for (const auto& v : history)
      if (v.size() != width())
        throw ContractError("content vector width mismatch");
    if (history.empty())
      return predict_from_h(rnn::Vector::Zero(width()));
    rnn::StackCache cache;
    stack.forward(history, nullptr, cache);
    return predict_from_h(stack.top_h(cache, history.size() - 1));
  }

  rnn::LstmStack stack;
  rnn::Matrix P;  // d_enc x d_enc
  rnn::Matrix p;  // d_enc x 1
};

// ============================================================================
// Bundle: the unit training produces and generation consumes
// ============================================================================

struct RecurrentBundle {
  RecurrentModel lm;
  SentenceEncoder encoder;      // meaningful when source != none
  PoemStateModel poem_state;    // meaningful when source == poem_state
  ConditioningSource source = ConditioningSource::none;
  TrainConfig config;

  bool has_encoder() const { return source != ConditioningSource::none; }
  bool has_poem_state() const { return source == ConditioningSource::poem_state; }

  void visit(const rnn::ParamVisitor& fn) {
    lm.visit("lm", fn);
    if (has_encoder()) encoder.visit("enc", fn);
    if (has_poem_state()) poem_state.visit("poem", fn);
  }
};

inline RecurrentBundle make_bundle(TokenId vocab, const TrainConfig& config,
                                   Direction direction,
                                   ConditioningSource source) {
  config.validate();
  RecurrentBundle b;
  b.source = source;
  b.config = config;
  int d_ctx = source == ConditioningSource::none ? 0 : config.d_enc;
  b.lm = RecurrentModel(vocab, config.d_emb, config.hidden, config.layers,
                        d_ctx, direction);
  if (source != ConditioningSource::none)
    b.encoder = SentenceEncoder(vocab, config.d_emb, config.d_enc);
  if (source == ConditioningSource::poem_state)
    b.poem_state = PoemStateModel(config.d_enc);
  Rng rng(derive_seed(config.seed, 0xa11ce));
  b.lm.init(rng);
  if (b.has_encoder()) b.encoder.init(rng);
  if (b.has_poem_state()) b.poem_state.init(rng);
  return b;
}

// ============================================================================
// Serialization
// ============================================================================

inline void save_bundle(std::ostream& out, RecurrentBundle& bundle) {
  io::write_string(out, "poemgen-rnn");
  io::write_u32(out, 1);
  io::write_u32(out, static_cast<std::uint32_t>(bundle.lm.vocab_size()));
  io::write_u32(out, static_cast<std::uint32_t>(bundle.config.d_emb));
  io::write_u32(out, static_cast<std::uint32_t>(bundle.config.hidden));
  io::write_u32(out, static_cast<std::uint32_t>(bundle.config.layers));
  io::write_u32(out, static_cast<std::uint32_t>(bundle.config.d_enc));
  io::write_u8(out, bundle.lm.direction() == Direction::forward ? 0 : 1);
  io::write_u8(out, static_cast<std::uint8_t>(bundle.source));
  bundle.visit([&](const std::string& name, rnn::Matrix& m) {
    io::write_string(out, name);
    io::write_u64(out, static_cast<std::uint64_t>(m.rows()));
    io::write_u64(out, static_cast<std::uint64_t>(m.cols()));
    const double* p = m.data();
    for (Eigen::Index k = 0; k < m.size(); ++k) io::write_f64(out, p[k]);
  });
}

inline RecurrentBundle load_bundle(std::istream& in) {
  if (io::read_string(in) != "poemgen-rnn")
    throw IoError("not a recurrent model file");
  if (io::read_u32(in) != 1) throw IoError("unsupported recurrent model version");
  TokenId vocab = static_cast<TokenId>(io::read_u32(in));
  TrainConfig config;
  config.d_emb = static_cast<int>(io::read_u32(in));
  config.hidden = static_cast<int>(io::read_u32(in));
  config.layers = static_cast<int>(io::read_u32(in));
  config.d_enc = static_cast<int>(io::read_u32(in));
  Direction dir = io::read_u8(in) == 0 ? Direction::forward : Direction::backward;
  auto source = static_cast<ConditioningSource>(io::read_u8(in));

  RecurrentBundle bundle;
  bundle.source = source;
  bundle.config = config;
  int d_ctx = source == ConditioningSource::none ? 0 : config.d_enc;
  bundle.lm = RecurrentModel(vocab, config.d_emb, config.hidden, config.layers,
                             d_ctx, dir);
  if (bundle.has_encoder())
    bundle.encoder = SentenceEncoder(vocab, config.d_emb, config.d_enc);
  if (bundle.has_poem_state())
    bundle.poem_state = PoemStateModel(config.d_enc);

  bundle.visit([&](const std::string& name, rnn::Matrix& m) {
    std::string stored = io::read_string(in);
    if (stored != name) throw IoError("parameter block mismatch: " + stored);
    auto rows = static_cast<Eigen::Index>(io::read_u64(in));
    auto cols = static_cast<Eigen::Index>(io::read_u64(in));
    if (rows != m.rows() || cols != m.cols())
      throw IoError("parameter block shape mismatch: " + name);
    double* p = m.data();
    for (Eigen::Index k = 0; k < m.size(); ++k) p[k] = io::read_f64(in);
  });
  return bundle;
}

}  // namespace poemgen
