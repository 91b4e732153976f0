// selfgan: task generation, training, decoding, evaluation and trace analysis.
//
//   selfgan gen-task --config run.json
//   selfgan train    --config run.json --mode mle
//   selfgan train    --config run.json --mode selfgan --init checkpoints/mle.generator.ckpt
//   selfgan decode   --config run.json --generator G.ckpt [--discriminator D.ckpt] --decoder coop_mcts
//   selfgan eval     --config run.json mle:beam=outputs/mle_beam.outputs.jsonl ...
//   selfgan analyze  --config run.json outputs/selfgan.trace.csv ...
//
// Any config field can be overridden with --section.field=value.

#include <iostream>

#include <CLI11.hpp>

#include <selfgan/cli.hpp>

namespace {

enum Exit { kOk = 0, kConfigError = 2, kRuntimeError = 3 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON run configuration");
  app->add_option("--set", c.overrides, "override, e.g. --set decode.beam_size=8");
  app->allow_extras();
}

// Unmatched "--a.b=value" and "--a.b value" arguments become overrides
// (top-level keys such as --seed have no dot).
std::vector<std::string> collect_overrides(const CLI::App* app, const Common& c) {
  std::vector<std::string> out = c.overrides;
  const auto extras = app->remaining();
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2)
      throw selfgan::ConfigError("unexpected argument '" + a + "'");
    std::string body = a.substr(2);
    if (body.find('=') == std::string::npos) {
      if (i + 1 >= extras.size()) throw selfgan::ConfigError("missing value for '" + a + "'");
      body += "=" + extras[++i];
    }
    out.push_back(body);
  }
  return out;
}

void report(const selfgan::CommandResult& r) {
  for (const auto& m : r.messages) std::cout << m << '\n';
  for (const auto& p : r.written) std::cout << "wrote " << p.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SelfGAN toolkit: cooperative decoding and training on synthetic tasks"};
  app.require_subcommand(1);

  Common gen_c, train_c, decode_c, eval_c, analyze_c;
  auto* gen_task = app.add_subcommand("gen-task", "write vocab and train/val/test JSONL");
  add_common(gen_task, gen_c);

  auto* train = app.add_subcommand("train", "train a generator (and discriminator)");
  add_common(train, train_c);
  std::string mode = "mle", init, init_disc, run;
  train->add_option("--mode", mode, "mle | selfgan | rlgan | selfgan_beam_ablation");
  train->add_option("--init", init, "MLE generator checkpoint (GAN modes)");
  train->add_option("--init-disc", init_disc, "discriminator checkpoint; default: warm up a fresh one");
  train->add_option("--run", run, "run name used for output files");

  auto* decode = app.add_subcommand("decode", "decode a dataset split");
  add_common(decode, decode_c);
  std::string gen_ckpt, disc_ckpt, decoder = "beam", split = "test", name;
  bool mcts_trace = false;
  decode->add_option("--generator", gen_ckpt, "generator checkpoint")->required();
  decode->add_option("--discriminator", disc_ckpt, "discriminator checkpoint");
  decode->add_option("--decoder", decoder, "greedy | sampling | beam | das_local | das_global | coop_mcts");
  decode->add_option("--split", split, "train | val | test");
  decode->add_option("--name", name, "output file stem");
  decode->add_flag("--mcts-trace", mcts_trace, "also write per-simulation MCTS trace JSONL");

  auto* eval = app.add_subcommand("eval", "metric grid over decode outputs");
  add_common(eval, eval_c);
  std::vector<std::string> eval_inputs;
  std::string eval_split = "test";
  eval->add_option("outputs", eval_inputs, "generator:decoder=path")->required();
  eval->add_option("--split", eval_split, "dataset split the outputs were decoded from");

  auto* analyze = app.add_subcommand("analyze", "moving-average figure CSVs from traces");
  add_common(analyze, analyze_c);
  std::vector<std::string> trace_files;
  analyze->add_option("traces", trace_files, "TrainingTrace CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  using namespace selfgan;
  RunConfig config;
  CLI::App* active = app.get_subcommands().front();
  const Common& common = active == gen_task ? gen_c
                        : active == train   ? train_c
                        : active == decode  ? decode_c
                        : active == eval    ? eval_c
                                            : analyze_c;
  // Everything up to here is validation; failures exit 2.
  TrainArgs targs;
  DecodeArgs dargs;
  std::vector<EvalInput> einputs;
  try {
    config = load_run_config(common.config_path, collect_overrides(active, common));
    if (active == train) {
      targs.mode = train_mode_from_string(mode);
      if (!init.empty()) targs.init_generator = init;
      if (!init_disc.empty()) targs.init_discriminator = init_disc;
      targs.run_name = run;
    } else if (active == decode) {
      dargs.generator = gen_ckpt;
      if (!disc_ckpt.empty()) dargs.discriminator = disc_ckpt;
      dargs.decoder = decoder_kind_from_string(decoder);
      dargs.split = split;
      dargs.name = name;
      dargs.write_mcts_trace = mcts_trace;
    } else if (active == eval) {
      for (const auto& s : eval_inputs) einputs.push_back(parse_eval_input(s));
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    CommandResult r;
    if (active == gen_task) r = cmd_gen_task(config);
    else if (active == train) r = cmd_train(config, targs);
    else if (active == decode) r = cmd_decode(config, dargs);
    else if (active == eval) r = cmd_eval(config, einputs, eval_split);
    else {
      std::vector<fs::path> paths(trace_files.begin(), trace_files.end());
      r = cmd_analyze(paths, config.analyze_window, config.paths.output_dir);
    }
    report(r);
  } catch (const MissingCheckpoint& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const MissingDiscriminator& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const MissingModelEntry& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
