#pragma once

// Command implementations behind the `selfgan` executable. Each command takes
// a validated RunConfig, checks its file preconditions before writing
// anything, and returns the list of files it wrote.
//
// Layout under the configured directories:
//   data_dir/        vocab.txt, train.jsonl, val.jsonl, test.jsonl
//   checkpoint_dir/  <run>.generator.ckpt, <run>.discriminator.ckpt,
//                    <run>.epoch<k>.{generator,discriminator}.ckpt
//   output_dir/      <run>.trace.csv, <name>.outputs.jsonl, eval_report.{csv,txt},
//                    fig_*.csv

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfgan/config.hpp"
#include "selfgan/decoders.hpp"
#include "selfgan/evaluation.hpp"
#include "selfgan/tasks.hpp"
#include "selfgan/training.hpp"

namespace selfgan {

SELFGAN_DEFINE_ERROR(MissingCheckpoint);

namespace fs = std::filesystem;

struct CommandResult {
  std::vector<fs::path> written;
  std::vector<std::string> messages;
};

// RNG streams derived from RunConfig::seed, one per command.
enum CliStream : std::uint64_t {
  kGenTaskStream = 101,
  kInitStream = 102,
  kDecodeStream = 103,
  kEvalStream = 104,
};

namespace detail {

inline void write_text(const fs::path& path, const std::string& text, CommandResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
  result.written.push_back(path);
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw IoError(what + " not found: " + path.string());
}

inline fs::path split_path(const RunConfig& c, const std::string& split) {
  if (split != "train" && split != "val" && split != "test")
    throw ConfigError("split must be train, val or test");
  return fs::path(c.paths.data_dir) / (split + ".jsonl");
}

inline Vocabulary data_vocabulary(const RunConfig& c) {
  const fs::path p = fs::path(c.paths.data_dir) / "vocab.txt";
  require_file(p, "vocabulary");
  return load_vocabulary(p);
}

template <class Model>
void save_model(const Model& m, const fs::path& path, CommandResult& result) {
  save_checkpoint(m, path);
  result.written.push_back(path);
}

}  // namespace detail

// ----------------------------------------------------------------------------
// gen-task
// ----------------------------------------------------------------------------

inline CommandResult cmd_gen_task(const RunConfig& config) {
  config.validate();
  const fs::path dir(config.paths.data_dir);
  detail::ensure_dir(dir);
  RandomSource rng = RandomSource(config.seed).derive(kGenTaskStream);
  const TaskSplits splits = generate_task(config.task, rng);
  const Vocabulary vocab = config.vocabulary();
  CommandResult r;
  save_vocabulary(vocab, dir / "vocab.txt");
  r.written.push_back(dir / "vocab.txt");
  for (const auto& [name, data] : {std::pair{"train", &splits.train}, std::pair{"val", &splits.val},
                                   std::pair{"test", &splits.test}}) {
    const fs::path p = dir / (std::string(name) + ".jsonl");
    save_dataset(*data, vocab, p);
    r.written.push_back(p);
    r.messages.push_back(std::string(name) + ": " + std::to_string(data->size()) + " examples");
  }
  return r;
}

// ----------------------------------------------------------------------------
// train
// ----------------------------------------------------------------------------

enum class TrainMode { mle, selfgan, rlgan, selfgan_beam_ablation };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::mle: return "mle";
    case TrainMode::selfgan: return "selfgan";
    case TrainMode::rlgan: return "rlgan";
    case TrainMode::selfgan_beam_ablation: return "selfgan_beam_ablation";
  }
  return "?";
}

inline TrainMode train_mode_from_string(std::string_view s) {
  for (auto m : {TrainMode::mle, TrainMode::selfgan, TrainMode::rlgan, TrainMode::selfgan_beam_ablation})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown training mode '" + std::string(s) + "'");
}

struct TrainArgs {
  TrainMode mode = TrainMode::mle;
  std::optional<fs::path> init_generator;      // required for GAN modes
  std::optional<fs::path> init_discriminator;  // otherwise a fresh one is warmed up
  std::string run_name;                        // defaults to the mode name
};

inline CommandResult cmd_train(const RunConfig& config, const TrainArgs& args) {
  config.validate();
  const bool gan = args.mode != TrainMode::mle;
  if (gan && !args.init_generator)
    throw MissingCheckpoint(to_string(args.mode) + " training starts from an MLE generator (--init)");
  if (args.init_generator) detail::require_file(*args.init_generator, "generator checkpoint");
  if (args.init_discriminator) detail::require_file(*args.init_discriminator, "discriminator checkpoint");
  const fs::path train_file = detail::split_path(config, "train");
  detail::require_file(train_file, "training data");
  const Vocabulary vocab = detail::data_vocabulary(config);
  const ModelArch arch = config.arch();
  if (vocab.size() != arch.vocab_size)
    throw ConfigError("vocabulary in data_dir does not match the task configuration");

  const auto dataset = load_dataset(train_file, vocab);
  const std::string run = args.run_name.empty() ? to_string(args.mode) : args.run_name;
  const fs::path ckpt_dir(config.paths.checkpoint_dir), out_dir(config.paths.output_dir);
  detail::ensure_dir(ckpt_dir);
  detail::ensure_dir(out_dir);

  TrainConfig tc = config.train_config();
  RandomSource init_rng = RandomSource(config.seed).derive(kInitStream);
  GeneratorModel gen(arch);
  if (args.init_generator) {
    gen = load_checkpoint<GeneratorModel>(*args.init_generator);
    if (!(gen.arch() == arch)) throw ConfigError("generator checkpoint architecture differs from config");
  } else {
    gen.initialize(init_rng);
  }

  CommandResult r;
  const auto ckpt = [&](const std::string& tag, const char* kind) {
    return ckpt_dir / (run + tag + "." + kind + ".ckpt");
  };

  if (!gan) {
    tc.epochs = config.mle_epochs;
    TrainingTrace trace;
    try {
      trace = train_mle(gen, dataset, tc);
    } catch (const NonFiniteLoss&) {
      detail::save_model(gen, ckpt(".aborted", "generator"), r);
      throw;
    }
    detail::save_model(gen, ckpt("", "generator"), r);
    detail::write_text(out_dir / (run + ".trace.csv"), trace.to_csv(), r);
    r.messages.push_back("train greedy accuracy: " +
                         format_double(greedy_accuracy(gen, dataset, tc.decoder.decode)));
    return r;
  }

  DiscriminatorModel disc(arch);
  if (args.init_discriminator) {
    disc = load_checkpoint<DiscriminatorModel>(*args.init_discriminator);
    if (!(disc.arch() == arch)) throw ConfigError("discriminator checkpoint architecture differs from config");
  } else {
    RandomSource disc_rng = RandomSource(config.seed).derive(kInitStream).derive(1);
    disc.initialize(disc_rng);
    warmup_discriminator(disc, gen, dataset, tc);
  }

  if (args.mode == TrainMode::selfgan_beam_ablation) tc.coop_decoder = CoopDecoder::beam;
  TrainingTrace trace;
  try {
    if (args.mode == TrainMode::rlgan) {
      trace = train_rlgan_baseline(gen, disc, dataset, tc);
    } else {
      const EpochHook hook = [&](const GeneratorModel& g, const DiscriminatorModel& d,
                                 const TrainProgress& p, const TrainingTrace&) {
        if (tc.checkpoint_every == 0 || p.epoch % tc.checkpoint_every != 0 || p.epoch == tc.epochs) return;
        const std::string tag = ".epoch" + std::to_string(p.epoch);
        detail::save_model(g, ckpt(tag, "generator"), r);
        detail::save_model(d, ckpt(tag, "discriminator"), r);
      };
      trace = train_selfgan(gen, disc, dataset, tc, {}, hook);
    }
  } catch (const NonFiniteLoss&) {
    detail::save_model(gen, ckpt(".aborted", "generator"), r);
    detail::save_model(disc, ckpt(".aborted", "discriminator"), r);
    throw;
  }
  detail::save_model(gen, ckpt("", "generator"), r);
  detail::save_model(disc, ckpt("", "discriminator"), r);
  detail::write_text(out_dir / (run + ".trace.csv"), trace.to_csv(), r);
  return r;
}

// ----------------------------------------------------------------------------
// decode
// ----------------------------------------------------------------------------

struct DecodeArgs {
  fs::path generator;
  std::optional<fs::path> discriminator;
  DecoderKind decoder = DecoderKind::beam;
  std::string split = "test";
  std::string name;                     // output file stem; defaults to the decoder name
  bool write_mcts_trace = false;
};

inline std::string output_line(const Vocabulary& vocab, const Condition& cond, const DecodeResult& d,
                               std::optional<double> disc_score) {
  nlohmann::ordered_json j;
  j["condition"] = decode(cond.token_ids(), vocab);
  j["output"] = decode(d.sequence.token_ids(), vocab);
  j["gen_logprob"] = d.gen_logprob;
  j["disc_score"] = disc_score ? nlohmann::ordered_json(*disc_score) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

inline CommandResult cmd_decode(const RunConfig& config, const DecodeArgs& args) {
  config.validate();
  if (is_cooperative(args.decoder) && !args.discriminator)
    throw MissingDiscriminator(to_string(args.decoder) + " needs --discriminator");
  detail::require_file(args.generator, "generator checkpoint");
  if (args.discriminator) detail::require_file(*args.discriminator, "discriminator checkpoint");
  const fs::path data_file = detail::split_path(config, args.split);
  detail::require_file(data_file, "dataset");
  if (args.write_mcts_trace && args.decoder != DecoderKind::coop_mcts)
    throw ConfigError("an MCTS trace needs decoder coop_mcts");

  const Vocabulary vocab = detail::data_vocabulary(config);
  const auto data = load_dataset(data_file, vocab);
  const auto gen = load_checkpoint<GeneratorModel>(args.generator);
  std::optional<DiscriminatorModel> disc;
  if (args.discriminator) disc = load_checkpoint<DiscriminatorModel>(*args.discriminator);
  if (gen.arch().vocab_size != vocab.size() || (disc && disc->arch().vocab_size != vocab.size()))
    throw ConfigError("checkpoint vocabulary size differs from data_dir/vocab.txt");

  const fs::path out_dir(config.paths.output_dir);
  detail::ensure_dir(out_dir);
  const std::string name = args.name.empty() ? to_string(args.decoder) : args.name;

  const RandomSource base = RandomSource(config.seed).derive(kDecodeStream);
  std::string outputs, traces;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& cond = data[i].condition;
    RandomSource rng = base.derive(i);
    MctsTrace trace;
    const DecodeResult d = run_decoder(args.decoder, cond, gen, disc ? &*disc : nullptr,
                                       config.decoding, rng, args.write_mcts_trace ? &trace : nullptr);
    std::optional<double> score;
    if (disc) score = disc->score(PrefixView{cond.token_ids(), d.sequence.token_ids()});
    outputs += output_line(vocab, cond, d, score) + '\n';
    if (args.write_mcts_trace) {
      nlohmann::ordered_json head;
      head["type"] = "example";
      head["index"] = i;
      head["condition"] = decode(cond.token_ids(), vocab);
      traces += head.dump() + '\n' + trace.to_jsonl(&vocab);
    }
  }
  CommandResult r;
  detail::write_text(out_dir / (name + ".outputs.jsonl"), outputs, r);
  if (args.write_mcts_trace) detail::write_text(out_dir / (name + ".mcts_trace.jsonl"), traces, r);
  r.messages.push_back("decoded " + std::to_string(data.size()) + " conditions");
  return r;
}

/// Reads a decode output file back as (condition, output) pairs.
inline std::vector<ExamplePair> load_outputs(const fs::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open outputs " + path.string());
  std::vector<ExamplePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back(make_pair(j.at("condition").get<std::string>(), j.at("output").get<std::string>(), vocab));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// eval
// ----------------------------------------------------------------------------

struct EvalInput {
  std::string generator;
  std::string decoder;
  fs::path file;

  std::string model_name() const { return generator + "_" + decoder; }
};

/// Parses "generator:decoder=path".
inline EvalInput parse_eval_input(std::string_view spec) {
  const auto colon = spec.find(':');
  const auto eq = spec.find('=');
  if (colon == std::string_view::npos || eq == std::string_view::npos || colon == 0 || eq < colon + 2 ||
      eq + 1 == spec.size())
    throw ConfigError("outputs must look like generator:decoder=path, got '" + std::string(spec) + "'");
  return {std::string(spec.substr(0, colon)), std::string(spec.substr(colon + 1, eq - colon - 1)),
          fs::path(std::string(spec.substr(eq + 1)))};
}

inline CommandResult cmd_eval(const RunConfig& config, const std::vector<EvalInput>& inputs,
                              const std::string& split = "test") {
  config.validate();
  if (inputs.empty()) throw ConfigError("eval needs at least one outputs file");
  std::set<std::string> names;
  for (const auto& in : inputs) {
    if (!names.insert(in.model_name()).second)
      throw ConfigError("duplicate outputs entry " + in.model_name());
    detail::require_file(in.file, "outputs");
  }
  for (auto p : config.eval.protocols) {
    if (p == DiscProtocol::base && !names.count(kBaseModelName))
      throw MissingModelEntry("base protocol needs an entry mle:beam=<file>");
    if (p == DiscProtocol::base_plus && names.size() < 2)
      throw MissingModelEntry("base_plus protocol needs at least two outputs files");
  }
  const fs::path data_file = detail::split_path(config, split);
  detail::require_file(data_file, "dataset");
  const Vocabulary vocab = detail::data_vocabulary(config);
  const auto refs = load_dataset(data_file, vocab);

  ModelOutputs outputs;
  for (const auto& in : inputs) {
    auto outs = load_outputs(in.file, vocab);
    if (outs.size() != refs.size())
      throw InvariantViolation(in.file.string() + " has " + std::to_string(outs.size()) +
                               " outputs, expected " + std::to_string(refs.size()));
    for (std::size_t i = 0; i < outs.size(); ++i)
      if (!(outs[i].condition == refs[i].condition))
        throw InvariantViolation(in.file.string() + ": record " + std::to_string(i) +
                                 " does not match the dataset condition");
    outputs.emplace(in.model_name(), std::move(outs));
  }

  std::map<DiscProtocol, std::map<std::string, double>> pct;
  for (auto p : config.eval.protocols) {
    RandomSource rng = RandomSource(config.seed).derive(kEvalStream).derive(static_cast<std::uint64_t>(p));
    pct[p] = discriminator_metric(p, outputs, refs, config.disc_metric_config(), rng);
  }

  std::vector<EvalReport> rows;
  for (const auto& in : inputs) {
    EvalReport row;
    row.generator = in.generator;
    row.decoder = in.decoder;
    const auto& outs = outputs.at(in.model_name());
    fill_ngram_metrics(row, outs, refs);
    if (pct.count(DiscProtocol::base)) row.pct_human_base = pct[DiscProtocol::base].at(in.model_name());
    if (pct.count(DiscProtocol::base_plus))
      row.pct_human_base_plus = pct[DiscProtocol::base_plus].at(in.model_name());
    std::size_t valid = 0;
    for (const auto& o : outs) valid += is_human_valid(config.task, vocab, o.condition, o.reference);
    row.task_validity_rate = static_cast<double>(valid) / static_cast<double>(outs.size());
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const EvalReport& a, const EvalReport& b) {
    return a.generator < b.generator;
  });

  const fs::path out_dir(config.paths.output_dir);
  detail::ensure_dir(out_dir);
  CommandResult r;
  detail::write_text(out_dir / "eval_report.csv", eval_report_csv(rows), r);
  const std::string table = eval_report_table(rows);
  detail::write_text(out_dir / "eval_report.txt", table, r);
  r.messages.push_back(table);
  return r;
}

// ----------------------------------------------------------------------------
// analyze
// ----------------------------------------------------------------------------

/// Trailing mean over the last `window` entries, ignoring NaN; NaN when the
/// window holds no finite value.
inline std::vector<double> moving_average(std::span<const double> xs, std::size_t window) {
  if (window < 1) throw ConfigError("window must be >= 1");
  std::vector<double> out(xs.size());
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isnan(xs[i])) sum += xs[i], ++count;
    if (i >= window && !std::isnan(xs[i - window])) sum -= xs[i - window], --count;
    out[i] = count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

struct FigureSpec {
  const char* file;
  std::vector<std::string> columns;
};

inline const std::vector<FigureSpec>& figure_specs() {
  static const std::vector<FigureSpec> specs{
      {"fig_disc_grad_norm.csv", {"disc_grad_norm"}},
      {"fig_collinearity.csv", {"gen_collinearity"}},
      {"fig_humanlike_deltas.csv", {"length_delta", "novelty_delta", "repetition3_delta"}},
      {"fig_disc_scores.csv", {"mean_d_coop", "mean_d_gen"}},
  };
  return specs;
}

/// Writes one long-format CSV per figure: run,step,<moving averages>. Runs
/// are named by trace file stem.
inline CommandResult cmd_analyze(const std::vector<fs::path>& traces, std::size_t window,
                                 const fs::path& out_dir) {
  if (traces.empty()) throw ConfigError("analyze needs at least one trace");
  if (window < 1) throw ConfigError("window must be >= 1");
  std::vector<std::pair<std::string, TrainingTrace>> loaded;
  for (const auto& p : traces) {
    detail::require_file(p, "trace");
    std::string stem = p.filename().string();
    if (const auto dot = stem.find('.'); dot != std::string::npos) stem.resize(dot);
    loaded.emplace_back(stem, TrainingTrace::load(p));
  }
  detail::ensure_dir(out_dir);
  CommandResult r;
  for (const auto& fig : figure_specs()) {
    std::string csv = "run,step";
    for (const auto& c : fig.columns) csv += "," + c + "_ma";
    csv += '\n';
    for (const auto& [run, trace] : loaded) {
      const auto steps = trace.column("step");
      std::vector<std::vector<double>> cols;
      for (const auto& c : fig.columns) cols.push_back(moving_average(trace.column(c), window));
      for (std::size_t i = 0; i < steps.size(); ++i) {
        csv += run + "," + std::to_string(static_cast<std::size_t>(steps[i]));
        for (const auto& col : cols) csv += "," + format_double(col[i]);
        csv += '\n';
      }
    }
    detail::write_text(out_dir / fig.file, csv, r);
  }
  return r;
}

}  // namespace selfgan
