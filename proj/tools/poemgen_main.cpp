// Command-line surface: ingest | train | generate | score, one config file
// plus overrides. Exit codes: 0 success, 1 io/internal, 2 config, 3
// ingestion, 4 training, 5 generation.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "poemgen/engine.hpp"

namespace {

int exit_code(poemgen::Error::Kind kind) {
  using Kind = poemgen::Error::Kind;
  switch (kind) {
    case Kind::config: return 2;
    case Kind::ingest: return 3;
    case Kind::train: return 4;
    case Kind::generate: return 5;
    case Kind::io: return 1;
    case Kind::contract: return 1;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keyword-conditioned poem generation pipeline"};
  app.require_subcommand(1);

  std::string config_path, model_dir, mode, strategy, out_path;
  std::string which = "all", tag_file, input_file;
  std::uint64_t seed = 0;
  int lines = 0, top_n = 0, max_len = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "engine config file")->required();
    sub->add_option("--model-dir", model_dir, "override model directory");
    sub->add_option("--mode", mode, "override token mode: word|char");
  };

  CLI::App* ingest = app.add_subcommand("ingest", "build corpus artifacts");
  add_common(ingest);

  CLI::App* train = app.add_subcommand("train", "train models");
  add_common(train);
  train->add_option("--which", which, "ngram|recurrent|pos|all");

  CLI::App* generate = app.add_subcommand("generate", "generate a poem");
  add_common(generate);
  generate->add_option("tags", tag_file, "tag sheet (overrides config path)");
  generate->add_option("--seed", seed, "override global seed");
  generate->add_option("--lines", lines, "override line count");
  generate->add_option("--top-n", top_n, "override sampling width");
  generate->add_option("--max-len", max_len, "override line length cap");
  generate->add_option("--strategy", strategy,
                       "override expansion: none|frequency|cooccurrence");
  generate->add_option("--out", out_path, "also write the poem to this file");

  CLI::App* score = app.add_subcommand("score", "fluency-score text lines");
  add_common(score);
  score->add_option("input", input_file, "text file, one line per line")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    poemgen::EngineConfig config = poemgen::load_engine_config(config_path);
    if (!model_dir.empty()) config.paths.model_dir = model_dir;
    if (!mode.empty())
      config.mode = poemgen::engine_detail::mode_from_string(mode);

    if (app.got_subcommand(ingest)) {
      poemgen::cmd_ingest(config, std::cout);
    } else if (app.got_subcommand(train)) {
      poemgen::cmd_train(config, which, std::cout);
    } else if (app.got_subcommand(generate)) {
      if (generate->count("--seed")) config.seed = seed;
      if (generate->count("--lines")) config.generation.num_lines = lines;
      if (generate->count("--top-n")) config.generation.top_n = top_n;
      if (generate->count("--max-len")) config.generation.max_line_len = max_len;
      if (generate->count("--strategy"))
        config.keywords.strategy = poemgen::strategy_from_string(strategy);

      std::string provenance =
          out_path.empty()
              ? (std::filesystem::path(config.paths.model_dir) /
                 "provenance.json")
                    .string()
              : out_path + ".provenance.json";
      std::ostringstream poem;
      poemgen::cmd_generate(config, tag_file, poem, provenance);
      std::cout << poem.str();
      if (!out_path.empty()) {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw poemgen::IoError("cannot write " + out_path);
        f << poem.str();
      }
    } else if (app.got_subcommand(score)) {
      poemgen::cmd_score(config, input_file, std::cout);
    }
    return 0;
  } catch (const poemgen::Error& e) {
    std::cerr << "poemgen: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "poemgen: " << e.what() << "\n";
    return 1;
  }
}
