#pragma once

// Command-line front end. `run_cli` is the whole program; the executable in
// tools/ only forwards argv and the standard streams.
//
// Exit status: 0 success, 1 usage or configuration error, 2 data error,
// 3 gradient check failed.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dynwin/category.hpp"
#include "dynwin/config.hpp"
#include "dynwin/corpus.hpp"
#include "dynwin/error.hpp"
#include "dynwin/gradcheck.hpp"
#include "dynwin/networks.hpp"
#include "dynwin/serialization.hpp"
#include "dynwin/synthetic.hpp"
#include "dynwin/training.hpp"

namespace dynwin {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitGradFail = 3;

namespace cli {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string significant(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// RFC 4180 field quoting.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Surfaces only, one sentence per line. Empty lines become empty sentences.
inline std::vector<std::vector<std::string>> read_raw_sentences(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read input file '" + path + "'");
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(split_ws(line));
  }
  return out;
}

inline std::ostream& open_output(const std::string& path, std::ostream& fallback,
                                 std::unique_ptr<std::ofstream>& holder) {
  if (path.empty() || path == "-") return fallback;
  holder = std::make_unique<std::ofstream>(path);
  if (!*holder) throw DataError("cannot write '" + path + "'");
  return *holder;
}

inline std::string dashed(std::string s) {
  for (char& c : s)
    if (c == '_') c = '-';
  return s;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::map<std::string, std::string> flags;
};

inline int cmd_train(const CLI::App& sub, const TrainArgs& args, std::ostream& out,
                     std::ostream& err) {
  RunConfig rc;
  if (!args.config_path.empty()) {
    rc = load_config(args.config_path);
    // Input paths in a config file are relative to the file.
    const auto base = std::filesystem::path(args.config_path).parent_path();
    for (const char* key : {"train", "dev", "test", "embeddings"}) {
      const std::string v = rc.get(key);
      if (!v.empty() && std::filesystem::path(v).is_relative())
        rc.set(key, (base / v).lexically_normal().string());
    }
  }
  RunConfig from_flags;
  for (const auto& key : config_keys())
    if (sub.count("--" + dashed(key.name)) > 0) from_flags.set(key.name, args.flags.at(key.name));
  rc.overlay(from_flags);

  for (const char* required : {"train", "dev"})
    if (rc.get(required).empty())
      throw ConfigError(std::string("missing required setting '") + required +
                        "' (config file key or --" + required + ")");
  const ResolvedConfig cfg = resolve_config(rc);
  const std::string model_path = rc.get("model");
  const std::string history_path =
      rc.get("history").empty() ? model_path + ".history.csv" : rc.get("history");

  const auto train_corpus = load_corpus(rc.get("train"));
  const auto dev_corpus = load_corpus(rc.get("dev"));
  if (train_corpus.empty()) throw DataError("training corpus '" + rc.get("train") + "' is empty");
  if (dev_corpus.empty()) throw DataError("development corpus '" + rc.get("dev") + "' is empty");

  Tagger model(cfg.model, build_vocab_tagset(train_corpus, cfg.lexicon));
  if (!rc.get("embeddings").empty()) {
    const auto emb = load_embeddings(rc.get("embeddings"), cfg.model.features.word_dim);
    for (const auto& w : emb.warnings) err << "warning: " << w << '\n';
    const std::size_t copied = model.tables().load_pretrained(model.lexicon().words, emb);
    err << "pretrained vectors: " << copied << " of " << model.lexicon().words.size() - 2
        << " training words\n";
  }
  const auto train = model.encode(train_corpus);
  const auto dev = model.encode(dev_corpus);
  std::size_t tokens = 0;
  for (const auto& e : train) tokens += e.size();
  err << "train: " << train.size() << " sentences, " << tokens << " tokens; dev: " << dev.size()
      << " sentences; tags: " << model.num_tags() << "; arch: " << to_string(cfg.model.arch)
      << "; gates: " << to_string(cfg.model.variant) << '\n';

  std::unique_ptr<std::ofstream> history_holder;
  std::ostream& history = open_output(history_path, out, history_holder);
  history << "epoch,train_loss,dev_acc\n";

  const std::size_t workers = cfg.workers;
  const Evaluator evaluator = [&](const Tagger& m, std::size_t) {
    return evaluate_accuracy(m, dev, workers);
  };
  double best_acc = 0.0;
  std::size_t best_epoch = 0;
  std::optional<Tagger> best;
  if (cfg.train.epochs == 0) {
    best_acc = evaluate_accuracy(model, dev, workers);
    best.emplace(std::move(model));
  } else {
    auto result = train_loop(std::move(model), train, dev, cfg.train, evaluator,
                             [&](const EpochRecord& r) {
                               out << r.epoch << '\t' << fixed(r.train_loss, 6) << '\t'
                                   << fixed(r.dev_acc, 4) << '\n'
                                   << std::flush;
                               history << r.epoch << ',' << fixed(r.train_loss, 6) << ','
                                       << fixed(r.dev_acc, 6) << '\n';
                             });
    best_acc = result.state.best_dev_acc;
    best_epoch = result.state.best_epoch;
    best.emplace(std::move(result.best));
  }
  if (!history) throw DataError("error writing history file '" + history_path + "'");
  save_model(*best, model_path);
  out << "best_dev_acc=" << fixed(best_acc, 4) << " at epoch=" << best_epoch << '\n';

  if (!rc.get("test").empty()) {
    const auto test = best->encode(load_corpus(rc.get("test")));
    const auto counts = count_correct(*best, test, workers);
    out << "test_acc=" << fixed(counts.accuracy(), 4) << " tokens=" << counts.tokens << '\n';
  }
  return kExitOk;
}

inline int cmd_tag(const std::string& model_path, const std::string& input,
                   const std::string& output, std::ostream& out) {
  const Tagger model = load_model(model_path);
  const auto sentences = read_raw_sentences(input);
  std::unique_ptr<std::ofstream> holder;
  std::ostream& dst = open_output(output, out, holder);
  for (const auto& words : sentences) {
    if (!words.empty()) {
      const auto tags = model.tag(model.encode(words));
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) dst << ' ';
        dst << words[i] << '|' << model.lexicon().tags.tag(tags[i]);
      }
    }
    dst << '\n';
  }
  return kExitOk;
}

inline int cmd_eval(const std::string& model_path, const std::string& gold_path,
                    std::size_t workers, std::ostream& out, std::ostream& err) {
  const Tagger model = load_model(model_path);
  const auto gold = model.encode(load_corpus(gold_path));
  if (gold.empty()) throw DataError("gold corpus '" + gold_path + "' is empty");
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  const auto counts = count_correct(model, gold, workers);
  out << "acc=" << fixed(counts.accuracy(), 4) << " tokens=" << counts.tokens << '\n';
  if (counts.unseen_gold > 0)
    err << "warning: " << counts.unseen_gold << " of " << counts.tokens
        << " tokens have gold tags outside the model's tag set; they count as errors\n";
  return kExitOk;
}

inline int cmd_gates(const std::string& model_path, const std::string& input,
                     const std::string& output, const std::string& reduce, std::ostream& out) {
  const Tagger model = load_model(model_path);
  const ModelConfig& c = model.config();
  if (c.variant == GateVariant::None) throw ConfigError("model has no filter gates to export");
  if (reduce != "none" && reduce != "mean")
    throw ConfigError("--reduce expects 'none' or 'mean', got '" + reduce + "'");
  const bool elementwise = c.variant == GateVariant::Elementwise;
  if (elementwise && reduce != "mean")
    throw ConfigError(
        "elementwise gates have one value per feature, not per slot; pass --reduce mean to "
        "export the per-slot mean");
  const std::size_t radius = c.features.window_radius;
  const std::size_t F = c.features.token_dim();

  const auto sentences = read_raw_sentences(input);
  std::unique_ptr<std::ofstream> holder;
  std::ostream& dst = open_output(output, out, holder);
  dst << "sentence,token,surface";
  for (std::size_t k = 0; k < c.features.slots(); ++k) {
    const long offset = static_cast<long>(k) - static_cast<long>(radius);
    dst << ",slot" << (offset > 0 ? "+" : "") << offset;
  }
  dst << '\n';
  std::size_t sent_index = 0;
  for (const auto& words : sentences) {
    if (!words.empty()) {
      const auto gates = model.gate_activations(model.encode(words));
      for (std::size_t t = 0; t < words.size(); ++t) {
        dst << sent_index << ',' << t << ',' << csv_field(words[t]);
        for (std::size_t k = 0; k < c.features.slots(); ++k) {
          double v = 0.0;
          if (elementwise) {
            for (std::size_t j = 0; j < F; ++j) v += gates[t][k * F + j];
            v /= static_cast<double>(F);
          } else {
            v = gates[t][k];
          }
          dst << ',' << significant(v, 8);
        }
        dst << '\n';
      }
    }
    ++sent_index;
  }
  return kExitOk;
}

struct GradcheckArgs {
  std::vector<std::string> archs{"all"};
  std::vector<std::string> variants{"all"};
  std::size_t hidden = 5;
  std::size_t length = 4;
  std::uint64_t seed = 1;
  double threshold = 1e-4;
  double step = 1e-5;
  std::string mode = "train";
  bool double_precision = false;
  bool verbose = false;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::vector<Architecture> archs;
  for (const auto& s : a.archs) {
    if (s == "all") {
      archs = {Architecture::Mlp, Architecture::Elman, Architecture::Jordan, Architecture::Lstm,
               Architecture::BiLstm};
      break;
    }
    archs.push_back(parse_architecture(s));
  }
  std::vector<GateVariant> variants;
  for (const auto& s : a.variants) {
    if (s == "all") {
      variants = {GateVariant::ScalarConcat, GateVariant::Elementwise, GateVariant::TwoLayer,
                  GateVariant::WeightedAverage};
      break;
    }
    variants.push_back(parse_gate_variant(s));
  }
  if (a.mode != "train" && a.mode != "test")
    throw ConfigError("--mode expects 'train' or 'test', got '" + a.mode + "'");
  GradCheckOptions opt;
  opt.threshold = a.threshold;
  opt.step = a.step;
  opt.mode = a.mode == "train" ? Mode::Train : Mode::Test;
  opt.extended_precision = !a.double_precision;

  bool all_pass = true;
  for (Architecture arch : archs)
    for (GateVariant v : variants) {
      TinyProblem p = make_tiny_problem(arch, v, a.seed, a.hidden, a.length);
      const GradReport r = compare_grads(p.model, p.example, opt);
      all_pass = all_pass && r.pass();
      out << (r.pass() ? "PASS " : "FAIL ") << to_string(arch) << '/' << to_string(v)
          << " max_rel_err=" << r.max_rel_error() << '\n';
      if (a.verbose || !r.pass()) print_report(out, r);
    }
  out << (all_pass ? "all gradient checks passed" : "gradient check FAILED") << '\n';
  return all_pass ? kExitOk : kExitGradFail;
}

inline int cmd_cat(const std::vector<std::string>& inline_tags, const std::string& file,
                   const std::string& style_name, std::ostream& out, std::ostream& err) {
  CategoryStyle style;
  if (style_name == "minimal")
    style = CategoryStyle::Minimal;
  else if (style_name == "ccgbank")
    style = CategoryStyle::Ccgbank;
  else
    throw ConfigError("--style expects 'minimal' or 'ccgbank', got '" + style_name + "'");

  std::vector<std::string> tags = inline_tags;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot read tag file '" + file + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      for (auto& t : split_ws(line)) tags.push_back(t);
    }
  }
  if (tags.empty()) throw ConfigError("no categories given (pass them as arguments or --file)");
  std::size_t failures = 0;
  for (const auto& tag : tags) {
    try {
      const Category c = parse_category(tag);
      const std::string printed = print_category(c, style);
      const bool round_trip = parse_category(printed) == c;
      out << tag << '\t' << printed << '\t' << category_arity(c)
          << (round_trip ? "" : "\tround-trip mismatch") << '\n';
      if (!round_trip) ++failures;
    } catch (const CategoryParseError& e) {
      out << tag << "\terror: " << e.what() << '\n';
      ++failures;
    }
  }
  err << "parsed " << tags.size() - failures << " of " << tags.size() << " categories\n";
  return failures ? kExitData : kExitOk;
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Supertagger with gated dynamic context windows"};
  app.name("dynwin");
  app.require_subcommand(1);

  // train
  cli::TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a tagger and write the best-dev model");
  train->add_option("--config", train_args.config_path, "'key = value' configuration file");
  for (const auto& key : config_keys()) {
    std::string help = key.help;
    if (!key.default_value.empty()) help += " [default: " + key.default_value + "]";
    std::string names = "--" + cli::dashed(key.name);
    if (key.name.find('_') != std::string::npos) names += ",--" + key.name;
    train->add_option(names, train_args.flags[key.name], help);
  }

  // tag
  std::string tag_model, tag_input, tag_output;
  auto* tag = app.add_subcommand("tag", "tag raw text, one sentence per line");
  tag->add_option("--model", tag_model, "model file")->required();
  tag->add_option("--input,input", tag_input, "input text")->required();
  tag->add_option("--output", tag_output, "output file [default: standard output]");

  // eval
  std::string eval_model, eval_gold;
  std::size_t eval_workers = 0;
  auto* eval = app.add_subcommand("eval", "1-best accuracy against a gold corpus");
  eval->add_option("--model", eval_model, "model file")->required();
  eval->add_option("--gold,gold", eval_gold, "gold corpus (pipe format)")->required();
  eval->add_option("--workers", eval_workers, "threads (0: hardware concurrency) [default: 0]");

  // gates
  std::string gates_model, gates_input, gates_output, gates_reduce = "none";
  auto* gates = app.add_subcommand("gates", "export per-token filter-gate activations as CSV");
  gates->add_option("--model", gates_model, "model file")->required();
  gates->add_option("--input,input", gates_input, "input text")->required();
  gates->add_option("--output", gates_output, "CSV file [default: standard output]");
  gates->add_option("--reduce", gates_reduce,
                    "none, or mean: average elementwise gates per slot [default: none]");

  // gradcheck
  cli::GradcheckArgs gc;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  gradcheck->add_option("--arch", gc.archs, "architectures, or 'all' [default: all]");
  gradcheck->add_option("--variant", gc.variants, "gate variants, or 'all' [default: all]");
  gradcheck->add_option("--hidden", gc.hidden, "hidden units [default: 5]");
  gradcheck->add_option("--length", gc.length, "sentence length [default: 4]");
  gradcheck->add_option("--seed", gc.seed, "model seed [default: 1]");
  gradcheck->add_option("--threshold", gc.threshold, "max relative error [default: 1e-4]");
  gradcheck->add_option("--step", gc.step, "finite-difference step [default: 1e-5]");
  gradcheck->add_option("--mode", gc.mode, "train (frozen dropout masks) or test [default: train]");
  gradcheck->add_flag("--double", gc.double_precision,
                      "evaluate the oracle in double instead of long double");
  gradcheck->add_flag("--verbose", gc.verbose, "per-block report for every model");

  // cat
  std::vector<std::string> cat_tags;
  std::string cat_file, cat_style = "minimal";
  auto* cat = app.add_subcommand("cat", "parse categories: canonical form and arity");
  cat->add_option("categories", cat_tags, "category strings");
  cat->add_option("--file", cat_file, "file of categories, whitespace separated");
  cat->add_option("--style", cat_style,
                  "minimal, or ccgbank (parenthesize every complex part) [default: minimal]");

  // gen-corpus
  SyntheticOptions syn;
  std::string syn_output;
  auto* gen = app.add_subcommand("gen-corpus", "write the synthetic toy corpus");
  gen->add_option("--sentences", syn.sentences, "sentence count [default: 50]");
  gen->add_option("--seed", syn.seed, "generator seed [default: 2017]");
  gen->add_option("--distractor-rate", syn.distractor_rate,
                  "probability of a distractor token before each word [default: 0]");
  gen->add_option("--distractor-pool", syn.distractor_pool,
                  "distinct distractor strings [default: 400]");
  gen->add_option("--pool-seed", syn.pool_seed, "seed of the distractor pool [default: 99]");
  gen->add_option("--output", syn_output, "corpus file [default: standard output]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (*train) return cli::cmd_train(*train, train_args, out, err);
    if (*tag) return cli::cmd_tag(tag_model, tag_input, tag_output, out);
    if (*eval) return cli::cmd_eval(eval_model, eval_gold, eval_workers, out, err);
    if (*gates) return cli::cmd_gates(gates_model, gates_input, gates_output, gates_reduce, out);
    if (*gradcheck) return cli::cmd_gradcheck(gc, out);
    if (*cat) return cli::cmd_cat(cat_tags, cat_file, cat_style, out, err);
    if (*gen) {
      std::unique_ptr<std::ofstream> holder;
      write_corpus(cli::open_output(syn_output, out, holder), generate_synthetic_corpus(syn));
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace dynwin
