// Fluency scoring: skip-gram statistics against brute-force pair counts,
// length-normalized n-gram scores, the POS tagging bridge, verdict
// combination, and percentile threshold calibration.

#include <cmath>
#include <set>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "poemgen/fluency.hpp"
#include "poemgen/ngram.hpp"

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

std::vector<Line> all_lines(const Corpus& corpus) {
  std::vector<Line> out;
  for (const auto& poem : corpus.poems)
    for (const auto& line : poem) out.push_back(line);
  return out;
}

Line shuffled_line(const Line& line, Rng& rng) {
  Line out = line;
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (std::size_t i = out.size(); i > 1; --i)
      std::swap(out[i - 1], out[rng() % i]);
    if (out != line) return out;
  }
  return out;  // all-identical tokens: permutation cannot differ
}

}  // namespace

// ===========================================================================
// Skip-gram table
// ===========================================================================

TEST_CASE("skip-gram counts enumerate ordered pairs per gap") {
  auto [corpus, vocab] = ingest_corpus_text("a b c\n", TokenMode::word, 1, "t");
  auto table = build_skipgram(corpus, 2);
  TokenId a = vocab.id_of("a"), b = vocab.id_of("b"), c = vocab.id_of("c");
  REQUIRE(table.at(a, b, 1) == 1);
  REQUIRE(table.at(b, c, 1) == 1);
  REQUIRE(table.at(a, c, 2) == 1);
  REQUIRE(table.at(a, c, 1) == 0);
  REQUIRE(table.at(b, a, 1) == 0);  // ordered, not symmetric
  REQUIRE(table.count.size() == 3);
  REQUIRE(table.unigrams.total == 3);

  REQUIRE_THROWS_AS(build_skipgram(corpus, 0), ConfigError);
  REQUIRE_THROWS_AS(build_skipgram(Corpus{}, 2), ContractError);
}

TEST_CASE("toy corpus skip-gram counts match the brute-force scan") {
  auto ing = load_corpus("toy1.txt");
  auto table = build_skipgram(ing.corpus, 2);
  auto lines = all_lines(ing.corpus);

  TokenId the = ing.vocabulary.id_of("the");
  TokenId city = ing.vocabulary.id_of("city");
  REQUIRE(table.at(the, city, 1) == 2);  // both poems start a line this way

  for (TokenId a = kNumReserved; a < ing.vocabulary.size(); ++a)
    for (TokenId b = kNumReserved; b < ing.vocabulary.size(); ++b)
      for (int gap = 1; gap <= 2; ++gap)
        REQUIRE(table.at(a, b, gap) == oracle::skipgram_count(lines, a, b, gap));

  // Gap bound one degenerates to bigram successor counts.
  auto bigram = build_skipgram(ing.corpus, 1);
  for (const auto& [key, n] : bigram.count) {
    REQUIRE(std::get<2>(key) == 1);
    REQUIRE(n == oracle::skipgram_count(lines, std::get<0>(key),
                                        std::get<1>(key), 1));
  }
}

TEST_CASE("skip-gram table serialization round-trips bitwise") {
  auto ing = load_corpus("toy1.txt");
  auto table = build_skipgram(ing.corpus, 3);

  std::ostringstream out;
  save_skipgram(out, table);
  std::istringstream in(out.str());
  auto loaded = load_skipgram(in);
  REQUIRE(loaded == table);

  std::ostringstream out2;
  save_skipgram(out2, loaded);
  REQUIRE(out2.str() == out.str());

  std::istringstream junk("not a table");
  REQUIRE_THROWS_AS(load_skipgram(junk), IoError);
}

// ===========================================================================
// N-gram score
// ===========================================================================

TEST_CASE("score_ngram divides the sequence log-probability by length plus one") {
  auto ing = load_corpus("toy1.txt");
  auto model = train_ngram(ing.corpus, ing.vocabulary.size(), 2,
                           Direction::forward, 0.5);
  oracle::NGramOracle ref(all_lines(ing.corpus), 2, 0.5, ing.vocabulary.size());

  TokenId city = ing.vocabulary.id_of("city");
  Line single{city};
  double expected_single =
      (std::log(ref.prob({}, city)) + std::log(ref.prob({city}, kEndId))) / 2.0;
  REQUIRE(score_ngram(model, single) ==
          Catch::Approx(expected_single).margin(1e-12));

  Line genuine = ing.corpus.poems[0][0];  // three tokens
  REQUIRE(score_ngram(model, genuine) ==
          Catch::Approx(ref.line_logprob(genuine) / 4.0).margin(1e-12));

  // Pure function: repeated calls agree bitwise.
  REQUIRE(score_ngram(model, genuine) == score_ngram(model, genuine));
  REQUIRE_THROWS_AS(score_ngram(model, Line{}), ContractError);
}

TEST_CASE("genuine lines outscore their shuffled permutations") {
  auto ing = load_corpus("fluency60.txt");
  auto lines = all_lines(ing.corpus);
  REQUIRE(lines.size() == 60);

  auto model = train_ngram(ing.corpus, ing.vocabulary.size(), 2,
                           Direction::forward, 0.5);

  Rng rng(derive_seed(2024, 0x5eed));
  int wins = 0;
  for (const Line& line : lines) {
    Line shuffled = shuffled_line(line, rng);
    if (score_ngram(model, line) > score_ngram(model, shuffled)) ++wins;
  }
  INFO("genuine wins " << wins << " of " << lines.size());
  REQUIRE(wins >= 57);  // 95 percent of 60
}

// ===========================================================================
// Skip-gram score
// ===========================================================================

TEST_CASE("skip-gram score matches the frozen association formula") {
  auto ing = load_corpus("toy1.txt");
  auto table = build_skipgram(ing.corpus, 3);
  auto lines = all_lines(ing.corpus);

  auto v = [&](const char* w) { return ing.vocabulary.id_of(w); };

  // Independent recomputation: counts from the brute-force scan, unigrams
  // recounted by hand, T = 15 tokens, alpha = 0.5.
  std::map<TokenId, long long> uni;
  long long total = 0;
  for (const auto& line : lines)
    for (TokenId t : line) {
      ++uni[t];
      ++total;
    }
  REQUIRE(total == 15);
  auto assoc = [&](TokenId a, TokenId b) {
    long long pair = 0;
    for (int g = 1; g <= 3; ++g) pair += oracle::skipgram_count(lines, a, b, g);
    return std::log((static_cast<double>(pair) + 0.5) *
                    static_cast<double>(total) /
                    ((static_cast<double>(uni[a]) + 0.5) *
                     (static_cast<double>(uni[b]) + 0.5)));
  };

  Line genuine{v("the"), v("city"), v("sleeps")};
  double expected =
      (assoc(genuine[0], genuine[1]) + assoc(genuine[0], genuine[2]) +
       assoc(genuine[1], genuine[2])) /
      3.0;
  REQUIRE(score_skipgram(table, genuine) ==
          Catch::Approx(expected).margin(1e-12));

  // Tokens that never share a line score strictly lower.
  Line scrambled{v("sleeps"), v("quiet"), v("moon")};
  REQUIRE(score_skipgram(table, genuine) > score_skipgram(table, scrambled));

  // Sub-2-token lines auto-pass with the +infinity sentinel.
  REQUIRE(std::isinf(score_skipgram(table, Line{v("city")})));
  REQUIRE(score_skipgram(table, Line{v("city")}) > 0);
}

TEST_CASE("skip-gram score is monotone in any single pair count") {
  auto ing = load_corpus("toy1.txt");
  auto table = build_skipgram(ing.corpus, 3);
  auto v = [&](const char* w) { return ing.vocabulary.id_of(w); };

  Line touched{v("sleeps"), v("quiet"), v("moon")};
  Line untouched{v("the"), v("city")};
  double before_touched = score_skipgram(table, touched);
  double before_untouched = score_skipgram(table, untouched);

  table.count[{v("sleeps"), v("quiet"), 1}] += 5;
  REQUIRE(score_skipgram(table, touched) > before_touched);
  REQUIRE(score_skipgram(table, untouched) == before_untouched);
}

// ===========================================================================
// POS bridge
// ===========================================================================

TEST_CASE("tag lexicon resolves every token to its dominant tag") {
  auto ing = load_corpus("toy1.txt");
  auto pos = load_pos_corpus(data_path("toy1_pos.txt"), ing.corpus);
  auto lex = PosTagLexicon::build(ing.corpus, pos, ing.vocabulary.size());

  auto tag = [&](const char* w) {
    return pos.tag_vocab.text_of(lex.tag_of(ing.vocabulary.id_of(w)));
  };
  REQUIRE(tag("the") == "DET");
  REQUIRE(tag("city") == "NOUN");
  REQUIRE(tag("sleeps") == "VERB");
  REQUIRE(tag("busy") == "ADJ");
  REQUIRE(tag("over") == "ADP");

  // Unknown and out-of-range ids fall back to the UNK tag.
  REQUIRE(lex.tag_of(kUnkId) == kUnkId);
  REQUIRE(lex.tag_of(9999) == kUnkId);
  REQUIRE(lex.size() == static_cast<std::size_t>(ing.vocabulary.size()));

  // Count ties break toward the smaller tag id.
  auto [tc, tv] = ingest_corpus_text("x y\nx z\n", TokenMode::word, 1, "t");
  auto [gc, gv] = ingest_corpus_text("A B\nB C\n", TokenMode::word, 1, "g");
  PosCorpus ambiguous{gc, gv, "t"};
  auto lex2 = PosTagLexicon::build(tc, ambiguous, tv.size());
  // "x" is tagged A once and B once; A has the smaller tag id.
  REQUIRE(lex2.tag_of(tv.id_of("x")) == gv.id_of("A"));

  // Serialization round-trip.
  std::ostringstream out;
  lex.save(out);
  std::istringstream in(out.str());
  REQUIRE(PosTagLexicon::load(in) == lex);
  std::istringstream junk("nope");
  REQUIRE_THROWS_AS(PosTagLexicon::load(junk), IoError);
}

TEST_CASE("pos model overfits tag lines and separates random tag noise") {
  auto ing = load_corpus("overfit10.txt");
  auto pos = load_pos_corpus(data_path("overfit10_pos.txt"), ing.corpus);
  REQUIRE(pos.tag_vocab.size() - kNumReserved <= 10);

  TrainConfig config;
  config.d_emb = 8;
  config.hidden = 16;
  config.d_enc = 4;
  config.learning_rate = 5e-3;
  config.epochs = 600;
  config.seed = 31;

  auto [bundle, result] = train_pos_lm(pos, config);
  auto units = make_units(pos.tags, ConditioningSource::none);
  double ppl = perplexity(bundle, units);
  INFO("tag perplexity " << ppl);
  REQUIRE(ppl < 1.5);

  // Deterministic: retraining reproduces the loss trace.
  auto [bundle2, result2] = train_pos_lm(pos, config);
  REQUIRE(result2.epoch_losses == result.epoch_losses);

  auto lex = PosTagLexicon::build(ing.corpus, pos, ing.vocabulary.size());
  const Line& genuine_tokens = ing.corpus.poems[0][0];
  double genuine = score_pos(bundle.lm, lex, genuine_tokens);

  // Uniformly random tag sequences of the same length score lower on
  // average.
  Rng rng(derive_seed(8, 8));
  double random_sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenId> tags;
    for (std::size_t k = 0; k < genuine_tokens.size(); ++k)
      tags.push_back(static_cast<TokenId>(
          kNumReserved + rng() % static_cast<std::uint64_t>(
                                     pos.tag_vocab.size() - kNumReserved)));
    random_sum += sequence_logprob(bundle.lm, tags) /
                  static_cast<double>(tags.size() + 1);
  }
  REQUIRE(genuine > random_sum / 100.0);

  // An all-unknown line still scores finitely via the UNK tag.
  Line unknowns{kUnkId, kUnkId, kUnkId};
  REQUIRE(std::isfinite(score_pos(bundle.lm, lex, unknowns)));
}

TEST_CASE("pos training reuses the gradient-checked trainer") {
  auto ing = load_corpus("toy1.txt");
  auto pos = load_pos_corpus(data_path("toy1_pos.txt"), ing.corpus);

  TrainConfig config;
  config.d_emb = 4;
  config.hidden = 6;
  config.d_enc = 3;
  auto bundle = make_bundle(pos.tag_vocab.size(), config, Direction::forward,
                            ConditioningSource::none);
  auto units = make_units(pos.tags, ConditioningSource::none);
  auto report = gradient_check(bundle, units, 1e-4, 60);
  INFO("max relative error " << report.max_rel_error);
  REQUIRE(report.max_rel_error < 1e-4);
}

// ===========================================================================
// Verdicts
// ===========================================================================

TEST_CASE("evaluate is the conjunction of enabled checks and names failures") {
  auto ing = load_corpus("toy1.txt");
  auto model = train_ngram(ing.corpus, ing.vocabulary.size(), 2,
                           Direction::forward, 0.5);
  auto table = build_skipgram(ing.corpus, 3);
  auto pos = load_pos_corpus(data_path("toy1_pos.txt"), ing.corpus);
  auto pos_model = train_ngram(pos.tags, pos.tag_vocab.size(), 2,
                               Direction::forward, 0.5);
  auto lex = PosTagLexicon::build(ing.corpus, pos, ing.vocabulary.size());

  FluencyScorers scorers;
  scorers.ngram = &model;
  scorers.skipgram = &table;
  scorers.pos_lm = &pos_model;
  scorers.lexicon = &lex;

  Line genuine = ing.corpus.poems[0][0];

  FluencyThresholds lenient;
  lenient.use_ngram = true;
  lenient.min_ngram = -100.0;
  auto report = evaluate(genuine, scorers, lenient);
  REQUIRE(report.pass);
  REQUIRE(report.ngram_pass);
  REQUIRE(report.ngram_score.has_value());
  REQUIRE_FALSE(report.skipgram_score.has_value());
  REQUIRE(report.detail.empty());

  // One failing check fails the line and is named.
  FluencyThresholds strict = lenient;
  strict.use_skipgram = true;
  strict.min_skipgram = 1e6;
  report = evaluate(genuine, scorers, strict);
  REQUIRE_FALSE(report.pass);
  REQUIRE(report.ngram_pass);
  REQUIRE_FALSE(report.skipgram_pass);
  REQUIRE(report.detail == "skipgram");

  // Multiple failures are all listed.
  strict.min_ngram = 1e6;
  strict.use_pos = true;
  strict.min_pos = 1e6;
  report = evaluate(genuine, scorers, strict);
  REQUIRE_FALSE(report.pass);
  REQUIRE(report.detail == "ngram skipgram pos");

  // Sub-2-token lines auto-pass the skip-gram check at any threshold.
  FluencyThresholds skip_only;
  skip_only.use_ngram = false;
  skip_only.use_skipgram = true;
  skip_only.min_skipgram = 1e6;
  Line single{ing.vocabulary.id_of("city")};
  report = evaluate(single, scorers, skip_only);
  REQUIRE(report.pass);

  // Contract violations.
  FluencyThresholds none;
  none.use_ngram = false;
  REQUIRE_THROWS_AS(evaluate(genuine, scorers, none), ConfigError);
  FluencyScorers missing;
  REQUIRE_THROWS_AS(evaluate(genuine, missing, lenient), ContractError);

  // Bitwise repeatable.
  auto a = evaluate(genuine, scorers, strict);
  auto b = evaluate(genuine, scorers, strict);
  REQUIRE(a.ngram_score == b.ngram_score);
  REQUIRE(a.skipgram_score == b.skipgram_score);
  REQUIRE(a.pos_score == b.pos_score);
  REQUIRE(a.pass == b.pass);
}

// ===========================================================================
// Calibration
// ===========================================================================

TEST_CASE("percentile uses the frozen floor index") {
  std::vector<double> scores;
  for (int k = 10; k >= 1; --k) scores.push_back(static_cast<double>(k));
  REQUIRE(score_percentile(scores, 0) == 1.0);
  REQUIRE(score_percentile(scores, 5) == 1.0);    // floor(5*9/100) = 0
  REQUIRE(score_percentile(scores, 50) == 5.0);   // floor(50*9/100) = 4
  REQUIRE(score_percentile(scores, 100) == 10.0); // index 9
  REQUIRE_THROWS_AS(score_percentile({}, 5), ContractError);
  REQUIRE_THROWS_AS(score_percentile({1.0}, 101), ContractError);
}

TEST_CASE("calibrated thresholds pass the held-out slice") {
  auto ing = load_corpus("fluency60.txt");
  REQUIRE(ing.corpus.poems.size() == 15);

  // Split: first ten poems (40 lines) calibrate, last five (20) are held out.
  Corpus train{{}, ing.corpus.mode};
  std::vector<Line> held_out;
  for (std::size_t p = 0; p < ing.corpus.poems.size(); ++p) {
    if (p < 10)
      train.poems.push_back(ing.corpus.poems[p]);
    else
      for (const auto& line : ing.corpus.poems[p]) held_out.push_back(line);
  }
  REQUIRE(train.line_count() == 40);
  REQUIRE(held_out.size() == 20);

  auto model =
      train_ngram(train, ing.vocabulary.size(), 2, Direction::forward, 0.5);
  auto table = build_skipgram(train, 3);
  FluencyScorers scorers;
  scorers.ngram = &model;
  scorers.skipgram = &table;

  FluencyThresholds enabled;
  enabled.use_ngram = true;
  enabled.use_skipgram = true;
  auto thresholds =
      calibrate_thresholds(all_lines(train), scorers, enabled, 5.0);
  REQUIRE(std::isfinite(thresholds.min_ngram));
  REQUIRE(std::isfinite(thresholds.min_skipgram));

  // By construction at most floor(5*39/100) = 1 calibration line fails
  // each check.
  int train_pass = 0;
  for (const Line& line : all_lines(train))
    if (evaluate(line, scorers, thresholds).pass) ++train_pass;
  REQUIRE(train_pass >= 38);

  int held_pass = 0;
  for (const Line& line : held_out)
    if (evaluate(line, scorers, thresholds).pass) ++held_pass;
  INFO("held-out pass " << held_pass << " of 20");
  REQUIRE(held_pass >= 18);  // 90 percent
}
