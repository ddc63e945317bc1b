// Recurrent family: LSTM forward correctness, analytic-vs-numeric
// gradients across every parameter block, seeded training (overfit and
// hierarchical-vs-flat), conditioning effectiveness, and serialization.

#include <cstring>
#include <fstream>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "poemgen/recurrent.hpp"
#include "poemgen/training.hpp"

using namespace poemgen;

namespace {

std::string data_path(const std::string& name) {
  return std::string(POEMGEN_DATA_DIR) + "/" + name;
}

struct Ingested {
  Corpus corpus;
  Vocabulary vocabulary;
};

Ingested load_corpus(const std::string& name) {
  auto [c, v] = ingest_corpus(data_path(name), TokenMode::word, 1);
  return {std::move(c), std::move(v)};
}

TrainConfig tiny_config(int d_emb, int hidden, int layers, int d_enc) {
  TrainConfig c;
  c.d_emb = d_emb;
  c.hidden = hidden;
  c.layers = layers;
  c.d_enc = d_enc;
  return c;
}

std::vector<TokenId> surface_ids(const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (TokenId t = kNumReserved; t < static_cast<TokenId>(vocab.size()); ++t)
    ids.push_back(t);
  return ids;
}

double total_variation(const NextTokenDistribution& a,
                       const NextTokenDistribution& b) {
  return 0.5 * (a - b).cwiseAbs().sum();
}

}  // namespace

// ===========================================================================
// Forward pass against a scalar re-derivation
// ===========================================================================

TEST_CASE("lstm step matches a scalar reference computation") {
  rnn::LstmStack stack;
  stack.build(1, 1, 1, 1);
  auto& L = stack.layers[0];
  // Rows of the fused preactivation are [input, forget, cell, output].
  L.W << 0.5, -0.3, 0.8, 0.2;
  L.U << 0.1, 0.4, -0.2, 0.3;
  L.C << 0.3, -0.1, 0.2, 0.4;
  L.b << 0.05, 1.0, -0.1, 0.0;

  const double cond_val = 0.9;
  rnn::Vector cond(1);
  cond << cond_val;

  std::vector<rnn::Vector> xs(2, rnn::Vector(1));
  xs[0] << 0.7;
  xs[1] << -0.4;

  rnn::StackCache cache;
  stack.forward(xs, &cond, cache);

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double h = 0.0, c = 0.0;
  std::vector<double> expected;
  for (double x : {0.7, -0.4}) {
    double ai = 0.5 * x + 0.1 * h + 0.3 * cond_val + 0.05;
    double af = -0.3 * x + 0.4 * h - 0.1 * cond_val + 1.0;
    double ag = 0.8 * x - 0.2 * h + 0.2 * cond_val - 0.1;
    double ao = 0.2 * x + 0.3 * h + 0.4 * cond_val + 0.0;
    c = sig(af) * c + sig(ai) * std::tanh(ag);
    h = sig(ao) * std::tanh(c);
    expected.push_back(h);
  }

  REQUIRE(stack.top_h(cache, 0)[0] == Catch::Approx(expected[0]).epsilon(1e-12));
  REQUIRE(stack.top_h(cache, 1)[0] == Catch::Approx(expected[1]).epsilon(1e-12));
}

TEST_CASE("initialization: forget bias one, weights inside the init range") {
  auto bundle = make_bundle(20, tiny_config(4, 6, 2, 3),
                            Direction::forward, ConditioningSource::poem_state);
  const auto& L0 = bundle.lm.stack.layers[0];
  for (int k = 0; k < 6; ++k) {
    REQUIRE(L0.b(6 + k, 0) == 1.0);   // forget slice
    REQUIRE(L0.b(k, 0) == 0.0);       // input slice
    REQUIRE(L0.b(12 + k, 0) == 0.0);  // cell slice
    REQUIRE(L0.b(18 + k, 0) == 0.0);  // output slice
  }
  double lo = bundle.lm.E.minCoeff(), hi = bundle.lm.E.maxCoeff();
  REQUIRE(lo >= -0.08);
  REQUIRE(hi <= 0.08);
  REQUIRE(lo < 0.0);  // actually random, not degenerate
  REQUIRE(hi > 0.0);

  // Same seed, same parameters; different seed, different parameters.
  auto again = make_bundle(20, tiny_config(4, 6, 2, 3),
                           Direction::forward, ConditioningSource::poem_state);
  REQUIRE(again.lm.E == bundle.lm.E);
  TrainConfig other = tiny_config(4, 6, 2, 3);
  other.seed = 99;
  auto different = make_bundle(20, other, Direction::forward,
                               ConditioningSource::poem_state);
  REQUIRE(different.lm.E != bundle.lm.E);
}

// ===========================================================================
// Training units
// ===========================================================================

TEST_CASE("unit construction per conditioning source") {
  auto ing = load_corpus("toy1.txt");
  const Corpus& corpus = ing.corpus;

  auto none = make_units(corpus, ConditioningSource::none);
  auto prev = make_units(corpus, ConditioningSource::previous_line);
  auto poem = make_units(corpus, ConditioningSource::poem_state);

  REQUIRE(none.size() == 4);
  REQUIRE(prev.size() == 4);
  REQUIRE(poem.size() == 2);

  // First line of each poem carries no context; later lines carry one.
  REQUIRE_FALSE(prev[0].has_context);
  REQUIRE(prev[1].has_context);
  REQUIRE(prev[1].lines.size() == 2);
  REQUIRE(prev[1].lines[0] == corpus.poems[0][0]);

  // Every line is a target exactly once regardless of source: the corpus
  // has 15 tokens and 4 lines, so 19 predicted positions including END.
  for (auto source : {ConditioningSource::none,
                      ConditioningSource::previous_line,
                      ConditioningSource::poem_state}) {
    auto units = make_units(corpus, source);
    std::size_t total = 0;
    for (const auto& u : units) total += unit_target_tokens(u, source);
    REQUIRE(total == 19);
  }
}

// ===========================================================================
// Gradient verification (criterion: every block within 1e-4)
// ===========================================================================

TEST_CASE("gradient check: hierarchical bundle, every parameter block") {
  auto ing = load_corpus("hier3.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());

  auto bundle = make_bundle(vocab_size, tiny_config(4, 8, 2, 5),
                            Direction::forward, ConditioningSource::poem_state);
  auto units = make_units(ing.corpus, ConditioningSource::poem_state);

  auto report = gradient_check(bundle, units, 1e-4, 200);
  INFO("max relative error " << report.max_rel_error);
  REQUIRE(report.probes >= 200);
  REQUIRE(report.max_rel_error < 1e-4);

  // Two stacked layers plus conditioning, encoder, poem recurrence, and
  // the output head: 19 named blocks in total.
  REQUIRE(report.per_block.size() == 19);
  for (const char* name :
       {"lm.embedding", "lm.layer0.W", "lm.layer0.U", "lm.layer0.C",
        "lm.layer0.b", "lm.layer1.W", "lm.layer1.U", "lm.layer1.b", "lm.out.W",
        "lm.out.b", "enc.embedding", "enc.layer0.W", "enc.layer0.U",
        "enc.layer0.b", "poem.layer0.W", "poem.layer0.U", "poem.layer0.b",
        "poem.head.P", "poem.head.b"}) {
    INFO("block " << name);
    REQUIRE(report.per_block.count(name) == 1);
    REQUIRE(report.per_block.at(name) < 1e-4);
  }
}

TEST_CASE("gradient check: unconditioned and previous-line bundles") {
  auto ing = load_corpus("toy1.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());

  {
    auto bundle = make_bundle(vocab_size, tiny_config(4, 8, 1, 3),
                              Direction::forward, ConditioningSource::none);
    auto units = make_units(ing.corpus, ConditioningSource::none);
    auto report = gradient_check(bundle, units, 1e-4, 100);
    INFO("none-source max relative error " << report.max_rel_error);
    REQUIRE(report.max_rel_error < 1e-4);
    REQUIRE(report.per_block.size() == 6);
  }
  {
    auto bundle = make_bundle(vocab_size, tiny_config(4, 8, 1, 3),
                              Direction::backward,
                              ConditioningSource::previous_line);
    auto units = make_units(ing.corpus, ConditioningSource::previous_line);
    auto report = gradient_check(bundle, units, 1e-4, 100);
    INFO("previous-line max relative error " << report.max_rel_error);
    REQUIRE(report.max_rel_error < 1e-4);
    REQUIRE(report.per_block.size() == 11);
    REQUIRE(report.per_block.count("lm.layer0.C") == 1);
  }
}

// ===========================================================================
// Training behavior
// ===========================================================================

TEST_CASE("overfit: tiny model memorizes a ten-line corpus") {
  auto ing = load_corpus("overfit10.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());

  TrainConfig config = tiny_config(16, 32, 1, 4);
  config.learning_rate = 5e-3;
  config.epochs = 1200;
  config.seed = 7;

  auto [bundle, result] = train_recurrent(ing.corpus, vocab_size, config,
                                          Direction::forward,
                                          ConditioningSource::none);
  auto units = make_units(ing.corpus, ConditioningSource::none);
  double ppl = perplexity(bundle, units);
  INFO("final per-token perplexity " << ppl);
  REQUIRE(ppl < 1.3);

  REQUIRE(result.epoch_losses.size() == 1200);
  REQUIRE(result.epoch_losses.back() < result.epoch_losses.front());
  REQUIRE(result.final_loss == Catch::Approx(std::log(ppl)).margin(1e-12));
}

TEST_CASE("hierarchical model beats an equal-size flat model and uses its condition") {
  auto ing = load_corpus("hier3.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());

  TrainConfig config = tiny_config(12, 24, 1, 8);
  config.learning_rate = 1e-2;
  config.epochs = 800;
  config.seed = 11;

  auto [flat, flat_result] = train_recurrent(ing.corpus, vocab_size, config,
                                             Direction::forward,
                                             ConditioningSource::none);
  auto [hier, hier_result] = train_recurrent(ing.corpus, vocab_size, config,
                                             Direction::forward,
                                             ConditioningSource::poem_state);

  auto flat_units = make_units(ing.corpus, ConditioningSource::none);
  auto hier_units = make_units(ing.corpus, ConditioningSource::poem_state);
  double flat_ppl = perplexity(flat, flat_units);
  double hier_ppl = perplexity(hier, hier_units);
  INFO("flat " << flat_ppl << " hierarchical " << hier_ppl);
  REQUIRE(hier_ppl < flat_ppl);

  // Conditioning effectiveness: swapping the prior-line history moves the
  // next-token distribution by more than 1e-3 total variation on average.
  const auto& poem0 = ing.corpus.poems[0];
  const auto& poem1 = ing.corpus.poems[1];
  Eigen::VectorXd va = hier.encoder.encode(poem0[0]);
  Eigen::VectorXd vb = hier.encoder.encode(poem1[0]);
  Eigen::VectorXd cond_ab = hier.poem_state.advance({va, vb});
  Eigen::VectorXd cond_ba = hier.poem_state.advance({vb, va});

  auto ids = surface_ids(ing.vocabulary);
  Rng rng(derive_seed(3, 0x7f));
  double tv_sum = 0.0;
  for (int k = 0; k < 100; ++k) {
    std::vector<TokenId> prefix;
    std::size_t len = rng() % 3;  // empty through two-token prefixes
    for (std::size_t j = 0; j < len; ++j)
      prefix.push_back(ids[rng() % ids.size()]);
    auto pa = hier.lm.next_dist(prefix, &cond_ab);
    auto pb = hier.lm.next_dist(prefix, &cond_ba);
    tv_sum += total_variation(pa, pb);
  }
  double tv_mean = tv_sum / 100.0;
  INFO("mean total variation " << tv_mean);
  REQUIRE(tv_mean > 1e-3);
}

TEST_CASE("backward-direction model learns reversed transitions") {
  auto ing = load_corpus("toy1.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());

  TrainConfig config = tiny_config(12, 24, 1, 4);
  config.learning_rate = 1e-2;
  config.epochs = 400;
  config.seed = 5;

  auto [bundle, result] = train_recurrent(ing.corpus, vocab_size, config,
                                          Direction::backward,
                                          ConditioningSource::none);
  REQUIRE(bundle.lm.direction() == Direction::backward);

  // First prediction of the backward model is the distribution over
  // line-final tokens: {sleeps, quiet, city, smiles}, one line each.
  auto dist = bundle.lm.next_dist(std::vector<TokenId>{});
  double final_mass = dist[ing.vocabulary.id_of("sleeps")] +
                      dist[ing.vocabulary.id_of("quiet")] +
                      dist[ing.vocabulary.id_of("city")] +
                      dist[ing.vocabulary.id_of("smiles")];
  REQUIRE(final_mass > 0.9);
  // "the" never ends a line.
  REQUIRE(dist[ing.vocabulary.id_of("the")] < 0.02);
}

TEST_CASE("training is reproducible bit for bit under a fixed seed") {
  auto ing = load_corpus("toy1.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());

  TrainConfig config = tiny_config(8, 12, 1, 4);
  config.epochs = 40;
  config.batch_size = 3;  // multiple batches per epoch, real shuffling
  config.seed = 123;

  auto [a, ra] = train_recurrent(ing.corpus, vocab_size, config,
                                 Direction::forward,
                                 ConditioningSource::previous_line);
  auto [b, rb] = train_recurrent(ing.corpus, vocab_size, config,
                                 Direction::forward,
                                 ConditioningSource::previous_line);

  REQUIRE(ra.epoch_losses == rb.epoch_losses);

  std::vector<std::pair<std::string, rnn::Matrix*>> pa, pb;
  a.visit([&](const std::string& n, rnn::Matrix& m) { pa.emplace_back(n, &m); });
  b.visit([&](const std::string& n, rnn::Matrix& m) { pb.emplace_back(n, &m); });
  REQUIRE(pa.size() == pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) {
    REQUIRE(pa[k].first == pb[k].first);
    REQUIRE(std::memcmp(pa[k].second->data(), pb[k].second->data(),
                        sizeof(double) *
                            static_cast<std::size_t>(pa[k].second->size())) == 0);
  }
}

TEST_CASE("divergent training reports the failing epoch and batch") {
  auto ing = load_corpus("toy1.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());

  TrainConfig config = tiny_config(8, 12, 1, 4);
  config.learning_rate = 1e200;  // guarantees non-finite loss quickly
  config.epochs = 50;

  REQUIRE_THROWS_MATCHES(
      train_recurrent(ing.corpus, vocab_size, config, Direction::forward,
                      ConditioningSource::none),
      TrainError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("diverged at epoch")));
}

TEST_CASE("configuration validation rejects out-of-range settings") {
  TrainConfig c;
  c.learning_rate = 0.0;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.layers = 0;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.epochs = 0;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);

  TrainConfig paper = TrainConfig::paper_scale();
  REQUIRE(paper.d_emb == 256);
  REQUIRE(paper.hidden == 1024);
  REQUIRE(paper.layers == 3);
  paper.validate();
}

// ===========================================================================
// Encoder and poem-state behavior
// ===========================================================================

TEST_CASE("encoder separates lines; poem state is order sensitive") {
  auto ing = load_corpus("hier3.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());
  auto bundle = make_bundle(vocab_size, tiny_config(6, 10, 1, 5),
                            Direction::forward, ConditioningSource::poem_state);

  const auto& p0 = ing.corpus.poems[0];
  const auto& p1 = ing.corpus.poems[1];
  Eigen::VectorXd va = bundle.encoder.encode(p0[0]);
  Eigen::VectorXd vb = bundle.encoder.encode(p1[0]);
  REQUIRE(va.size() == 5);
  REQUIRE((va - vb).cwiseAbs().maxCoeff() > 0.0);

  Eigen::VectorXd fwd = bundle.poem_state.advance({va, vb});
  Eigen::VectorXd rev = bundle.poem_state.advance({vb, va});
  REQUIRE((fwd - rev).cwiseAbs().maxCoeff() > 0.0);

  // Empty history predicts from the zero initial state: exactly the bias.
  Eigen::VectorXd first = bundle.poem_state.advance({});
  REQUIRE(first == bundle.poem_state.p.col(0));

  // Deterministic: the same history yields the same vector.
  REQUIRE(bundle.poem_state.advance({va, vb}) == fwd);
}

TEST_CASE("conditioned model enforces its condition contract") {
  auto bundle = make_bundle(20, tiny_config(4, 6, 1, 3), Direction::forward,
                            ConditioningSource::previous_line);
  std::vector<TokenId> prefix{5, 6};
  REQUIRE_THROWS_AS(bundle.lm.next_dist(prefix), ContractError);
  Eigen::VectorXd wrong = Eigen::VectorXd::Zero(2);
  REQUIRE_THROWS_AS(bundle.lm.next_dist(prefix, &wrong), ContractError);
  Eigen::VectorXd right = Eigen::VectorXd::Zero(3);
  auto dist = bundle.lm.next_dist(prefix, &right);
  REQUIRE(dist.size() == 20);
  REQUIRE(dist.sum() == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(dist.minCoeff() > 0.0);
}

// ===========================================================================
// Serialization
// ===========================================================================

TEST_CASE("bundle round-trip is bitwise and agrees on 100 queries") {
  auto ing = load_corpus("hier3.txt");
  auto vocab_size = static_cast<TokenId>(ing.vocabulary.size());

  TrainConfig config = tiny_config(6, 10, 2, 5);
  config.epochs = 30;
  config.seed = 21;
  auto [bundle, result] = train_recurrent(ing.corpus, vocab_size, config,
                                          Direction::backward,
                                          ConditioningSource::poem_state);

  std::ostringstream out;
  save_bundle(out, bundle);
  std::string bytes = out.str();

  std::istringstream in(bytes);
  RecurrentBundle loaded = load_bundle(in);

  std::ostringstream out2;
  save_bundle(out2, loaded);
  REQUIRE(out2.str() == bytes);  // bitwise round-trip

  REQUIRE(loaded.source == ConditioningSource::poem_state);
  REQUIRE(loaded.lm.direction() == Direction::backward);
  REQUIRE(loaded.config.hidden == 10);

  auto ids = surface_ids(ing.vocabulary);
  Rng rng(derive_seed(17, 0xbeef));
  for (int q = 0; q < 100; ++q) {
    std::vector<TokenId> prefix;
    std::size_t len = rng() % 4;
    for (std::size_t j = 0; j < len; ++j)
      prefix.push_back(ids[rng() % ids.size()]);
    Eigen::VectorXd cond(5);
    for (int k = 0; k < 5; ++k) cond[k] = uniform01(rng) * 2.0 - 1.0;
    auto pa = bundle.lm.next_dist(prefix, &cond);
    auto pb = loaded.lm.next_dist(prefix, &cond);
    REQUIRE((pa - pb).cwiseAbs().maxCoeff() == 0.0);
  }

  // Encoder and poem-state agree as well.
  Eigen::VectorXd va = bundle.encoder.encode(ing.corpus.poems[0][0]);
  Eigen::VectorXd vb = loaded.encoder.encode(ing.corpus.poems[0][0]);
  REQUIRE(va == vb);
  REQUIRE(bundle.poem_state.advance({va}) == loaded.poem_state.advance({vb}));
}

TEST_CASE("bundle loading rejects corrupt input") {
  auto bundle = make_bundle(15, tiny_config(4, 6, 1, 3), Direction::forward,
                            ConditioningSource::none);
  std::ostringstream out;
  save_bundle(out, bundle);
  std::string bytes = out.str();

  std::istringstream junk("definitely not a model");
  REQUIRE_THROWS_AS(load_bundle(junk), IoError);

  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  REQUIRE_THROWS_AS(load_bundle(truncated), IoError);
}
