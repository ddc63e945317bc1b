#pragma once

// Pipeline engine behind the command-line surface: a single versioned config
// file, on-disk artifacts with magic strings, and the four commands (ingest,
// train, generate, score). Every command is a pure function of (artifacts,
// config, seed); nothing reads hidden global state.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "poemgen/fluency.hpp"
#include "poemgen/generate.hpp"
#include "poemgen/keywords.hpp"
#include "poemgen/ngram.hpp"
#include "poemgen/training.hpp"

namespace poemgen {

// ============================================================================
// Engine config
// ============================================================================

struct EnginePaths {
  std::string corpus;
  std::string pos_corpus;  // empty: POS scoring unavailable
  std::string tags;
  std::string model_dir = "models";

  bool operator==(const EnginePaths&) const = default;
};

// One config file holds every knob; commands take overrides on top. The
// file format is versioned JSON and round-trips losslessly.
struct EngineConfig {
  EnginePaths paths;
  TokenMode mode = TokenMode::word;
  int min_count = 1;

  int ngram_order = 2;
  double ngram_alpha = 0.5;
  int skipgram_k_max = 3;

  std::string family = "ngram";  // generation model family: ngram | recurrent
  std::string train_preset;      // "" | "paper-scale"
  TrainConfig train;
  GenerationConfig generation;
  KeywordConfig keywords;
  FluencyThresholds fluency;
  bool calibrate = true;  // recompute thresholds from corpus percentiles
  double calibration_percentile = 5.0;

  std::uint64_t seed = 0;

  bool operator==(const EngineConfig&) const = default;

  void validate() const {
    if (family != "ngram" && family != "recurrent")
      throw ConfigError("unknown model family: " + family);
    if (!train_preset.empty() && train_preset != "paper-scale")
      throw ConfigError("unknown train preset: " + train_preset);
    if (min_count < 1) throw ConfigError("min count must be >= 1");
    if (ngram_order < 1) throw ConfigError("n-gram order must be >= 1");
    if (ngram_alpha < 0) throw ConfigError("smoothing constant must be >= 0");
    if (skipgram_k_max < 1) throw ConfigError("skip-gram gap bound must be >= 1");
    if (calibration_percentile < 0.0 || calibration_percentile > 100.0)
      throw ConfigError("calibration percentile must be in [0, 100]");
    train.validate();
    generation.validate();
    keywords.validate();
    fluency.validate();
  }
};

namespace engine_detail {

inline TokenMode mode_from_string(const std::string& s) {
  if (s == "word") return TokenMode::word;
  if (s == "char") return TokenMode::character;
  throw ConfigError("unknown token mode: " + s);
}

inline const char* to_string(GenerationConfig::Conditioning c) {
  switch (c) {
    case GenerationConfig::Conditioning::none: return "none";
    case GenerationConfig::Conditioning::previous_line: return "previous-line";
    case GenerationConfig::Conditioning::hierarchical: return "hierarchical";
  }
  return "none";
}

inline GenerationConfig::Conditioning conditioning_from_string(
    const std::string& s) {
  if (s == "none") return GenerationConfig::Conditioning::none;
  if (s == "previous-line") return GenerationConfig::Conditioning::previous_line;
  if (s == "hierarchical") return GenerationConfig::Conditioning::hierarchical;
  throw ConfigError("unknown conditioning: " + s);
}

inline ConditioningSource conditioning_source(
    GenerationConfig::Conditioning c) {
  switch (c) {
    case GenerationConfig::Conditioning::none: return ConditioningSource::none;
    case GenerationConfig::Conditioning::previous_line:
      return ConditioningSource::previous_line;
    case GenerationConfig::Conditioning::hierarchical:
      return ConditioningSource::poem_state;
  }
  return ConditioningSource::none;
}

// Typo protection: every object in the config file may carry only the keys
// named here.
inline void check_keys(const nlohmann::json& obj, const std::string& where,
                       std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw ConfigError("unknown config key: " + where + "." + key);
  }
}

template <typename T>
void get_if(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace engine_detail

inline nlohmann::json engine_config_to_json(const EngineConfig& c) {
  using nlohmann::json;
  json j;
  j["version"] = 1;
  j["seed"] = c.seed;
  j["mode"] = to_string(c.mode);
  j["family"] = c.family;
  j["paths"] = {{"corpus", c.paths.corpus},
                {"pos_corpus", c.paths.pos_corpus},
                {"tags", c.paths.tags},
                {"model_dir", c.paths.model_dir}};
  j["ingest"] = {{"min_count", c.min_count}};
  j["ngram"] = {{"order", c.ngram_order},
                {"alpha", c.ngram_alpha},
                {"skipgram_k_max", c.skipgram_k_max}};
  j["train"] = {{"preset", c.train_preset},
                {"d_emb", c.train.d_emb},
                {"hidden", c.train.hidden},
                {"layers", c.train.layers},
                {"d_enc", c.train.d_enc},
                {"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_eps", c.train.adam_eps},
                {"clip_norm", c.train.clip_norm},
                {"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},
                {"seed", c.train.seed}};
  j["generation"] = {
      {"lines", c.generation.num_lines},
      {"top_n", c.generation.top_n},
      {"max_len", c.generation.max_line_len},
      {"max_attempts", c.generation.max_attempts},
      {"conditioning", engine_detail::to_string(c.generation.conditioning)}};
  j["keywords"] = {{"confidence_threshold", c.keywords.confidence_threshold},
                   {"min_frequency", c.keywords.min_frequency},
                   {"target_count", c.keywords.target_count},
                   {"strategy", to_string(c.keywords.strategy)},
                   {"noun_quota", c.keywords.noun_quota},
                   {"adjective_quota", c.keywords.adjective_quota}};
  j["fluency"] = {{"use_ngram", c.fluency.use_ngram},
                  {"min_ngram", c.fluency.min_ngram},
                  {"use_skipgram", c.fluency.use_skipgram},
                  {"min_skipgram", c.fluency.min_skipgram},
                  {"use_pos", c.fluency.use_pos},
                  {"min_pos", c.fluency.min_pos},
                  {"calibrate", c.calibrate},
                  {"percentile", c.calibration_percentile}};
  return j;
}

inline EngineConfig engine_config_from_json(const nlohmann::json& j) {
  using engine_detail::check_keys;
  using engine_detail::get_if;
  try {
    check_keys(j, "config",
               {"version", "seed", "mode", "family", "paths", "ingest",
                "ngram", "train", "generation", "keywords", "fluency"});
    if (!j.contains("version") || j.at("version").get<int>() != 1)
      throw ConfigError("config version must be 1");

    EngineConfig c;
    get_if(j, "seed", c.seed);
    if (j.contains("mode"))
      c.mode = engine_detail::mode_from_string(j.at("mode").get<std::string>());
    get_if(j, "family", c.family);

    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      check_keys(p, "paths", {"corpus", "pos_corpus", "tags", "model_dir"});
      get_if(p, "corpus", c.paths.corpus);
      get_if(p, "pos_corpus", c.paths.pos_corpus);
      get_if(p, "tags", c.paths.tags);
      get_if(p, "model_dir", c.paths.model_dir);
    }
    if (j.contains("ingest")) {
      const auto& p = j.at("ingest");
      check_keys(p, "ingest", {"min_count"});
      get_if(p, "min_count", c.min_count);
    }
    if (j.contains("ngram")) {
      const auto& p = j.at("ngram");
      check_keys(p, "ngram", {"order", "alpha", "skipgram_k_max"});
      get_if(p, "order", c.ngram_order);
      get_if(p, "alpha", c.ngram_alpha);
      get_if(p, "skipgram_k_max", c.skipgram_k_max);
    }
    if (j.contains("train")) {
      const auto& p = j.at("train");
      check_keys(p, "train",
                 {"preset", "d_emb", "hidden", "layers", "d_enc",
                  "learning_rate", "beta1", "beta2", "adam_eps", "clip_norm",
                  "batch_size", "epochs", "seed"});
      get_if(p, "preset", c.train_preset);
      if (c.train_preset == "paper-scale") c.train = TrainConfig::paper_scale();
      get_if(p, "d_emb", c.train.d_emb);
      get_if(p, "hidden", c.train.hidden);
      get_if(p, "layers", c.train.layers);
      get_if(p, "d_enc", c.train.d_enc);
      get_if(p, "learning_rate", c.train.learning_rate);
      get_if(p, "beta1", c.train.beta1);
      get_if(p, "beta2", c.train.beta2);
      get_if(p, "adam_eps", c.train.adam_eps);
      get_if(p, "clip_norm", c.train.clip_norm);
      get_if(p, "batch_size", c.train.batch_size);
      get_if(p, "epochs", c.train.epochs);
      get_if(p, "seed", c.train.seed);
    }
    if (j.contains("generation")) {
      const auto& p = j.at("generation");
      check_keys(p, "generation",
                 {"lines", "top_n", "max_len", "max_attempts", "conditioning"});
      get_if(p, "lines", c.generation.num_lines);
      get_if(p, "top_n", c.generation.top_n);
      get_if(p, "max_len", c.generation.max_line_len);
      get_if(p, "max_attempts", c.generation.max_attempts);
      if (p.contains("conditioning"))
        c.generation.conditioning = engine_detail::conditioning_from_string(
            p.at("conditioning").get<std::string>());
    }
    if (j.contains("keywords")) {
      const auto& p = j.at("keywords");
      check_keys(p, "keywords",
                 {"confidence_threshold", "min_frequency", "target_count",
                  "strategy", "noun_quota", "adjective_quota"});
      get_if(p, "confidence_threshold", c.keywords.confidence_threshold);
      get_if(p, "min_frequency", c.keywords.min_frequency);
      get_if(p, "target_count", c.keywords.target_count);
      if (p.contains("strategy"))
        c.keywords.strategy =
            strategy_from_string(p.at("strategy").get<std::string>());
      get_if(p, "noun_quota", c.keywords.noun_quota);
      get_if(p, "adjective_quota", c.keywords.adjective_quota);
    }
    if (j.contains("fluency")) {
      const auto& p = j.at("fluency");
      check_keys(p, "fluency",
                 {"use_ngram", "min_ngram", "use_skipgram", "min_skipgram",
                  "use_pos", "min_pos", "calibrate", "percentile"});
      get_if(p, "use_ngram", c.fluency.use_ngram);
      get_if(p, "min_ngram", c.fluency.min_ngram);
      get_if(p, "use_skipgram", c.fluency.use_skipgram);
      get_if(p, "min_skipgram", c.fluency.min_skipgram);
      get_if(p, "use_pos", c.fluency.use_pos);
      get_if(p, "min_pos", c.fluency.min_pos);
      get_if(p, "calibrate", c.calibrate);
      get_if(p, "percentile", c.calibration_percentile);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse: ") + e.what());
  }
}

inline EngineConfig load_engine_config(const std::string& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string(e.what()));
  }
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
  return engine_config_from_json(j);
}

inline void save_engine_config(const std::string& path,
                               const EngineConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << engine_config_to_json(config).dump(2) << "\n";
}

// ============================================================================
// Artifacts
// ============================================================================

// Fixed artifact names under the model directory; every file carries its own
// magic string and version.
struct ArtifactPaths {
  std::filesystem::path dir;

  explicit ArtifactPaths(const std::string& model_dir) : dir(model_dir) {}

  std::string vocabulary() const { return (dir / "vocab.bin").string(); }
  std::string stats() const { return (dir / "stats.bin").string(); }
  std::string skipgram() const { return (dir / "skipgram.bin").string(); }
  std::string ngram(Direction d) const {
    return (dir / (d == Direction::forward ? "ngram_fwd.bin" : "ngram_bwd.bin"))
        .string();
  }
  std::string recurrent(Direction d) const {
    return (dir / (d == Direction::forward ? "rnn_fwd.bin" : "rnn_bwd.bin"))
        .string();
  }
  std::string pos_lm() const { return (dir / "pos_lm.bin").string(); }
  std::string pos_lexicon() const { return (dir / "pos_lexicon.bin").string(); }
};

namespace engine_detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

// Re-tokenizes the corpus named by the config. Ingestion is deterministic,
// so this reproduces the exact corpus the artifacts were built from; the
// caller cross-checks against the stored vocabulary.
inline std::pair<Corpus, Vocabulary> corpus_of(const EngineConfig& config) {
  try {
    return ingest_corpus(config.paths.corpus, config.mode, config.min_count);
  } catch (const IoError& e) {
    throw IngestError(std::string(e.what()));
  }
}

inline Vocabulary load_vocabulary(const ArtifactPaths& artifacts) {
  auto in = open_in(artifacts.vocabulary());
  return Vocabulary::load(in);
}

inline std::string line_text(const Vocabulary& vocab, const Line& tokens) {
  std::string out;
  const char* sep = vocab.mode() == TokenMode::word ? " " : "";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += vocab.text_of(tokens[i]);
  }
  return out;
}

inline double mean_nll(const NGramModel& model, const Corpus& corpus) {
  double total = 0.0;
  std::size_t tokens = 0;
  const bool backward = model.direction() == Direction::backward;
  for (const auto& poem : corpus.poems)
    for (const auto& line : poem) {
      Line fed = line;
      if (backward) std::reverse(fed.begin(), fed.end());
      total -= sequence_logprob(model, fed);
      tokens += line.size() + 1;
    }
  return total / static_cast<double>(tokens);
}

}  // namespace engine_detail

// ============================================================================
// ingest
// ============================================================================

// Writes vocabulary, frequency/co-occurrence, and skip-gram artifacts.
// Everything is computed before the first byte is written, so a failing
// ingest leaves no partial artifacts.
inline void cmd_ingest(const EngineConfig& config, std::ostream& out) {
  config.validate();
  auto [corpus, vocab] = engine_detail::corpus_of(config);
  auto freq = frequencies(corpus);
  auto cooc = cooccurrence(corpus);
  auto skip = build_skipgram(corpus, config.skipgram_k_max);

  ArtifactPaths artifacts(config.paths.model_dir);
  std::filesystem::create_directories(artifacts.dir);
  {
    auto f = engine_detail::open_out(artifacts.vocabulary());
    vocab.save(f);
  }
  {
    auto f = engine_detail::open_out(artifacts.stats());
    save_stats(f, freq, cooc);
  }
  {
    auto f = engine_detail::open_out(artifacts.skipgram());
    save_skipgram(f, skip);
  }
  out << corpus.poems.size() << " poems, " << corpus.line_count()
      << " lines, vocab " << vocab.size() << "\n";
}

// ============================================================================
// train
// ============================================================================

// which: ngram | recurrent | pos | all. Backward variants are trained for
// the sequence families; POS gets a forward tag model plus the tag lexicon.
inline void cmd_train(const EngineConfig& config, const std::string& which,
                      std::ostream& out) {
  config.validate();
  if (which != "ngram" && which != "recurrent" && which != "pos" &&
      which != "all")
    throw ConfigError("unknown train target: " + which);

  ArtifactPaths artifacts(config.paths.model_dir);
  auto [corpus, vocab] = engine_detail::corpus_of(config);
  if (!(engine_detail::load_vocabulary(artifacts) == vocab))
    throw IngestError("corpus does not match ingest artifacts; re-run ingest");

  const bool all = which == "all";
  if (all || which == "ngram") {
    for (Direction d : {Direction::forward, Direction::backward}) {
      auto model =
          train_ngram(corpus, vocab, config.ngram_order, d, config.ngram_alpha);
      auto f = engine_detail::open_out(artifacts.ngram(d));
      model.save(f);
      out << "ngram " << to_string(d) << ": nll/token "
          << engine_detail::mean_nll(model, corpus) << "\n";
    }
  }
  if (all || which == "recurrent") {
    if (config.train_preset == "paper-scale")
      out << "warning: paper-scale preset selected; training at this size "
             "takes hours to days\n";
    auto source =
        engine_detail::conditioning_source(config.generation.conditioning);
    for (Direction d : {Direction::forward, Direction::backward}) {
      auto [bundle, result] =
          train_recurrent(corpus, vocab.size(), config.train, d, source);
      auto f = engine_detail::open_out(artifacts.recurrent(d));
      save_bundle(f, bundle);
      out << "recurrent " << to_string(d) << ": final loss "
          << result.final_loss << "\n";
    }
  }
  if (all || which == "pos") {
    if (config.paths.pos_corpus.empty()) {
      if (!all) throw ConfigError("pos corpus path not configured");
      out << "pos: skipped (no pos corpus configured)\n";
    } else {
      auto pos = load_pos_corpus(config.paths.pos_corpus, corpus);
      auto [bundle, result] = train_pos_lm(pos, config.train);
      auto lexicon = PosTagLexicon::build(corpus, pos, vocab.size());
      {
        auto f = engine_detail::open_out(artifacts.pos_lm());
        save_bundle(f, bundle);
      }
      {
        auto f = engine_detail::open_out(artifacts.pos_lexicon());
        lexicon.save(f);
      }
      out << "pos: final loss " << result.final_loss << "\n";
    }
  }
}

// ============================================================================
// Scoring context
// ============================================================================

// Owns every scorer the fluency gate needs, with thresholds either taken
// from the config or calibrated from corpus score percentiles.
struct ScoringContext {
  NGramModel ngram;
  std::optional<SkipGramTable> skipgram;
  std::optional<RecurrentBundle> pos_lm;
  std::optional<PosTagLexicon> lexicon;
  FluencyThresholds thresholds;

  FluencyScorers scorers() const {
    FluencyScorers s;
    s.ngram = &ngram;
    if (skipgram) s.skipgram = &*skipgram;
    if (pos_lm) s.pos_lm = &pos_lm->lm;
    if (lexicon) s.lexicon = &*lexicon;
    return s;
  }
};

inline ScoringContext load_scoring_context(const EngineConfig& config) {
  ArtifactPaths artifacts(config.paths.model_dir);
  auto in = engine_detail::open_in(artifacts.ngram(Direction::forward));
  ScoringContext ctx{NGramModel::load(in), {}, {}, {}, config.fluency};
  if (config.fluency.use_skipgram) {
    auto f = engine_detail::open_in(artifacts.skipgram());
    ctx.skipgram = load_skipgram(f);
  }
  if (config.fluency.use_pos) {
    auto f = engine_detail::open_in(artifacts.pos_lm());
    ctx.pos_lm = load_bundle(f);
    auto g = engine_detail::open_in(artifacts.pos_lexicon());
    ctx.lexicon = PosTagLexicon::load(g);
  }
  if (config.calibrate) {
    auto [corpus, vocab] = engine_detail::corpus_of(config);
    std::vector<Line> lines;
    for (const auto& poem : corpus.poems)
      for (const auto& line : poem) lines.push_back(line);
    ctx.thresholds = calibrate_thresholds(lines, ctx.scorers(), config.fluency,
                                          config.calibration_percentile);
  }
  return ctx;
}

// ============================================================================
// generate
// ============================================================================

namespace engine_detail {

// Gate used during regeneration; the retained score prefers the first
// enabled check so best-rejected selection is deterministic and meaningful.
inline LineEvaluator make_evaluator(const ScoringContext& ctx,
                                    const FluencyScorers& scorers) {
  return [&ctx, scorers](const std::vector<TokenId>& tokens) {
    auto report = evaluate(tokens, scorers, ctx.thresholds);
    LineJudgment j;
    j.pass = report.pass;
    j.detail = report.detail;
    if (report.ngram_score)
      j.score = *report.ngram_score;
    else if (report.skipgram_score)
      j.score = *report.skipgram_score;
    else if (report.pos_score)
      j.score = *report.pos_score;
    return j;
  };
}

inline nlohmann::json score_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;  // non-finite values serialize as null by JSON rules
}

}  // namespace engine_detail

// Prints the poem lines to `out`; the full provenance record (keywords with
// origins, per-line attempts and fluency scores, seed) goes to a JSON
// sidecar, keeping stdout pipe-friendly.
inline void cmd_generate(const EngineConfig& config,
                         const std::string& tag_path_override,
                         std::ostream& out,
                         const std::string& provenance_path) {
  config.validate();
  ArtifactPaths artifacts(config.paths.model_dir);
  Vocabulary vocab = engine_detail::load_vocabulary(artifacts);

  FrequencyTable freq;
  CooccurrenceTable cooc;
  {
    auto f = engine_detail::open_in(artifacts.stats());
    std::tie(freq, cooc) = load_stats(f);
  }

  std::string tag_path =
      tag_path_override.empty() ? config.paths.tags : tag_path_override;
  if (tag_path.empty()) throw ConfigError("no tag file configured");

  Rng keyword_rng(derive_seed(config.seed, 0x6b7764));
  auto assembled =
      assemble_keywords(tag_path, vocab, vocab.mode(), freq, cooc,
                        config.keywords, keyword_rng);
  if (assembled.keywords.items.empty())
    throw GenerateError("no eligible keywords assembled from " + tag_path);

  ScoringContext ctx = load_scoring_context(config);
  FluencyScorers scorers = ctx.scorers();

  // Generation model family.
  std::optional<NGramModel> ng_fwd, ng_bwd;
  std::optional<RecurrentBundle> rn_fwd, rn_bwd;
  GeneratorModels models;
  if (config.family == "ngram") {
    require(config.generation.conditioning ==
                GenerationConfig::Conditioning::none,
            "ngram family supports only unconditioned generation");
    auto f = engine_detail::open_in(artifacts.ngram(Direction::forward));
    ng_fwd = NGramModel::load(f);
    auto b = engine_detail::open_in(artifacts.ngram(Direction::backward));
    ng_bwd = NGramModel::load(b);
    models.fwd = &*ng_fwd;
    models.bwd = &*ng_bwd;
  } else {
    auto f = engine_detail::open_in(artifacts.recurrent(Direction::forward));
    rn_fwd = load_bundle(f);
    auto b = engine_detail::open_in(artifacts.recurrent(Direction::backward));
    rn_bwd = load_bundle(b);
    auto wanted =
        engine_detail::conditioning_source(config.generation.conditioning);
    require(rn_fwd->source == wanted && rn_bwd->source == wanted,
            "trained conditioning does not match the generation config");
    models.fwd = &rn_fwd->lm;
    models.bwd = &rn_bwd->lm;
    // One encoder and poem state serve both directions at generation time.
    models.encoder = &rn_fwd->encoder;
    models.poem_state = &rn_fwd->poem_state;
  }

  std::vector<LinePlan> plans(
      static_cast<std::size_t>(config.generation.num_lines));
  const auto& kws = assembled.keywords.items;
  for (std::size_t i = 0; i < plans.size() && i < kws.size(); ++i)
    plans[i].seed = kws[i].tokens;

  LineEvaluator evaluator = engine_detail::make_evaluator(ctx, scorers);
  Rng rng(derive_seed(config.seed, 0x67656e));
  GeneratedPoem poem =
      generate_poem(models, plans, evaluator, config.generation, rng);

  for (const auto& line : poem.lines)
    out << engine_detail::line_text(vocab, line.tokens) << "\n";

  nlohmann::json prov;
  prov["seed"] = config.seed;
  prov["image_id"] = assembled.image_id;
  prov["family"] = config.family;
  prov["thresholds"] = {{"use_ngram", ctx.thresholds.use_ngram},
                        {"min_ngram", ctx.thresholds.min_ngram},
                        {"use_skipgram", ctx.thresholds.use_skipgram},
                        {"min_skipgram", ctx.thresholds.min_skipgram},
                        {"use_pos", ctx.thresholds.use_pos},
                        {"min_pos", ctx.thresholds.min_pos}};
  prov["keywords"] = nlohmann::json::array();
  for (const auto& kw : kws)
    prov["keywords"].push_back(
        {{"word", kw.word}, {"origin", to_string(kw.origin)}});
  prov["lines"] = nlohmann::json::array();
  for (std::size_t i = 0; i < poem.lines.size(); ++i) {
    const auto& line = poem.lines[i];
    auto report = evaluate(line.tokens, scorers, ctx.thresholds);
    nlohmann::json rec;
    rec["text"] = engine_detail::line_text(vocab, line.tokens);
    rec["seeded"] = !line.seed_tokens.empty();
    rec["keyword"] = i < kws.size() ? nlohmann::json(kws[i].word)
                                    : nlohmann::json(nullptr);
    rec["attempts"] = line.attempts;
    rec["kept_rejected"] = line.kept_rejected;
    rec["growth"] = line.growth;
    rec["pass"] = report.pass;
    rec["detail"] = report.detail;
    rec["scores"] = {{"ngram", engine_detail::score_json(report.ngram_score)},
                     {"skipgram", engine_detail::score_json(report.skipgram_score)},
                     {"pos", engine_detail::score_json(report.pos_score)}};
    prov["lines"].push_back(std::move(rec));
  }
  auto f = engine_detail::open_out(provenance_path);
  f << prov.dump(2) << "\n";
}

// ============================================================================
// score
// ============================================================================

// One report line per non-empty input line: verdict, enabled scores, text.
// Unknown tokens map to UNK, exactly as generation-time scoring would see
// them. Empty input produces empty output.
inline void cmd_score(const EngineConfig& config, const std::string& input_path,
                      std::ostream& out) {
  config.validate();
  ArtifactPaths artifacts(config.paths.model_dir);
  Vocabulary vocab = engine_detail::load_vocabulary(artifacts);
  ScoringContext ctx = load_scoring_context(config);
  FluencyScorers scorers = ctx.scorers();

  std::string text = detail::read_file(input_path);
  std::istringstream lines(text);
  std::string raw;
  auto put_score = [&](const char* name, bool used,
                       const std::optional<double>& v) {
    out << " " << name << "=";
    if (used && v)
      out << *v;
    else
      out << "-";
  };
  while (std::getline(lines, raw)) {
    Line ids;
    for (const auto& token : tokenize(raw, vocab.mode()))
      ids.push_back(vocab.id_of(token));
    if (ids.empty()) continue;
    auto report = evaluate(ids, scorers, ctx.thresholds);
    out << (report.pass ? "pass" : "FAIL");
    put_score("ngram", ctx.thresholds.use_ngram, report.ngram_score);
    put_score("skipgram", ctx.thresholds.use_skipgram, report.skipgram_score);
    put_score("pos", ctx.thresholds.use_pos, report.pos_score);
    out << " | " << engine_detail::line_text(vocab, ids) << "\n";
  }
}

}  // namespace poemgen
