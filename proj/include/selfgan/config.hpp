#pragma once

// RunConfig: one JSON document holding every knob of a run. Missing keys take
// their defaults, unknown keys are rejected. Overrides use dotted paths that
// mirror the document, e.g. "decode.beam_size=8" or "mcts.c_puct=1.5".

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfgan/evaluation.hpp"
#include "selfgan/tasks.hpp"
#include "selfgan/training.hpp"

namespace selfgan {

SELFGAN_DEFINE_ERROR(ConfigError);

struct EvalSettings {
  std::vector<DiscProtocol> protocols;  // empty: n-gram metrics only
  std::size_t disc_epochs = 30;
  std::size_t disc_batch_size = 16;
  double disc_lr = 0.5;
  double train_fraction = 0.5;
};

struct PathSettings {
  std::string data_dir = "data";
  std::string checkpoint_dir = "checkpoints";
  std::string output_dir = "outputs";
};

struct RunConfig {
  std::uint64_t seed = 0;
  TaskSpec task;
  ModelArch model;  // vocab_size is derived from the task
  std::size_t mle_epochs = 5;
  TrainConfig train;  // train.seed and train.decoder are filled from `seed`, `decode`, `mcts`
  DecoderSettings decoding;
  EvalSettings eval;
  std::size_t analyze_window = 50;
  PathSettings paths;

  Vocabulary vocabulary() const { return task_vocabulary(task); }

  ModelArch arch() const {
    ModelArch a = model;
    a.vocab_size = vocabulary().size();
    return a;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    t.decoder = decoding;
    return t;
  }

  DiscMetricConfig disc_metric_config() const {
    DiscMetricConfig c;
    c.arch = arch();
    c.epochs = eval.disc_epochs;
    c.batch_size = eval.disc_batch_size;
    c.lr = eval.disc_lr;
    c.train_fraction = eval.train_fraction;
    return c;
  }

  void validate() const {
    task.validate();
    if (model.embed_dim < 1 || model.hidden_dim < 1 || model.context_window < 1)
      throw ConfigError("model dimensions must be >= 1");
    arch().validate();
    if (mle_epochs < 1) throw ConfigError("mle_epochs must be >= 1");
    train_config().validate();
    if (eval.disc_epochs < 1 || eval.disc_batch_size < 1) throw ConfigError("eval budget must be >= 1");
    if (!(eval.disc_lr > 0.0)) throw ConfigError("eval.disc_lr must be positive");
    if (!(eval.train_fraction > 0.0 && eval.train_fraction < 1.0))
      throw ConfigError("eval.train_fraction must be in (0, 1)");
    if (analyze_window < 1) throw ConfigError("analyze.window must be >= 1");
  }
};

// ----------------------------------------------------------------------------
// JSON mapping
// ----------------------------------------------------------------------------

namespace detail {

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError("'" + section_ + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key '" + qualified(key) + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad value for '" + qualified(key) + "': " + j_.at(key).dump());
    }
  }

  template <class T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  template <class Fn>
  void get_string(const char* key, Fn&& convert) {
    std::string s;
    bool present = j_.contains(key);
    get(key, s);
    if (present) {
      try {
        convert(s);
      } catch (const Error& e) {
        throw ConfigError("bad value for '" + qualified(key) + "': " + e.what());
      }
    }
  }

  const nlohmann::json* section(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string qualified(const std::string& key) const {
    return section_.empty() ? key : section_ + "." + key;
  }

 private:
  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

inline nlohmann::json optional_json(const auto& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["task"] = {{"name", to_string(c.task.name)},
               {"alphabet_size", c.task.alphabet_size},
               {"min_condition_length", c.task.min_condition_length},
               {"max_condition_length", c.task.max_condition_length},
               {"num_train", c.task.num_train},
               {"num_val", c.task.num_val},
               {"num_test", c.task.num_test},
               {"noise_rate", c.task.noise_rate}};
  j["model"] = {{"embed_dim", c.model.embed_dim},
                {"hidden_dim", c.model.hidden_dim},
                {"context_window", c.model.context_window},
                {"max_offset", c.model.max_offset}};
  const auto& t = c.train;
  j["train"] = {{"mle_epochs", c.mle_epochs},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"gen_lr", t.gen_lr},
                {"disc_lr", t.disc_lr},
                {"coop_decoder", to_string(t.coop_decoder)},
                {"checkpoint_every", t.checkpoint_every},
                {"log_every", t.log_every},
                {"rl_temperature", t.rl_temperature},
                {"baseline_decay", t.baseline_decay},
                {"disc_warmup_epochs", t.disc_warmup_epochs}};
  const auto& d = c.decoding.decode;
  j["decode"] = {{"max_length", d.max_length},
                 {"temperature", d.temperature},
                 {"top_k", detail::optional_json(d.top_k)},
                 {"top_p", detail::optional_json(d.top_p)},
                 {"beam_size", d.beam_size},
                 {"das_candidates", d.das_candidates},
                 {"das_alpha", d.das_alpha},
                 {"num_samples", d.num_samples},
                 {"block_repeat_ngram", detail::optional_json(d.block_repeat_ngram)},
                 {"length_penalty", d.length_penalty}};
  const auto& m = c.decoding.mcts;
  j["mcts"] = {{"c_puct", m.c_puct},
               {"num_simulations", m.num_simulations},
               {"expansion_top_p", m.expansion_top_p},
               {"pi_temperature", m.pi_temperature},
               {"reuse_subtree", m.reuse_subtree}};
  nlohmann::json protocols = nlohmann::json::array();
  for (auto p : c.eval.protocols) protocols.push_back(to_string(p));
  j["eval"] = {{"protocols", protocols},
               {"disc_epochs", c.eval.disc_epochs},
               {"disc_batch_size", c.eval.disc_batch_size},
               {"disc_lr", c.eval.disc_lr},
               {"train_fraction", c.eval.train_fraction}};
  j["analyze"] = {{"window", c.analyze_window}};
  j["paths"] = {{"data_dir", c.paths.data_dir},
                {"checkpoint_dir", c.paths.checkpoint_dir},
                {"output_dir", c.paths.output_dir}};
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::Reader root(j, "");
  root.get("seed", c.seed);
  if (auto* s = root.section("task")) {
    detail::Reader r(*s, "task");
    r.get_string("name", [&](const std::string& v) { c.task.name = task_kind_from_string(v); });
    r.get("alphabet_size", c.task.alphabet_size);
    r.get("min_condition_length", c.task.min_condition_length);
    r.get("max_condition_length", c.task.max_condition_length);
    r.get("num_train", c.task.num_train);
    r.get("num_val", c.task.num_val);
    r.get("num_test", c.task.num_test);
    r.get("noise_rate", c.task.noise_rate);
  }
  if (auto* s = root.section("model")) {
    detail::Reader r(*s, "model");
    r.get("embed_dim", c.model.embed_dim);
    r.get("hidden_dim", c.model.hidden_dim);
    r.get("context_window", c.model.context_window);
    r.get("max_offset", c.model.max_offset);
  }
  if (auto* s = root.section("train")) {
    detail::Reader r(*s, "train");
    auto& t = c.train;
    r.get("mle_epochs", c.mle_epochs);
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("gen_lr", t.gen_lr);
    r.get("disc_lr", t.disc_lr);
    r.get_string("coop_decoder", [&](const std::string& v) { t.coop_decoder = coop_decoder_from_string(v); });
    r.get("checkpoint_every", t.checkpoint_every);
    r.get("log_every", t.log_every);
    r.get("rl_temperature", t.rl_temperature);
    r.get("baseline_decay", t.baseline_decay);
    r.get("disc_warmup_epochs", t.disc_warmup_epochs);
  }
  if (auto* s = root.section("decode")) {
    detail::Reader r(*s, "decode");
    auto& d = c.decoding.decode;
    r.get("max_length", d.max_length);
    r.get("temperature", d.temperature);
    r.get_optional("top_k", d.top_k);
    r.get_optional("top_p", d.top_p);
    r.get("beam_size", d.beam_size);
    r.get("das_candidates", d.das_candidates);
    r.get("das_alpha", d.das_alpha);
    r.get("num_samples", d.num_samples);
    r.get_optional("block_repeat_ngram", d.block_repeat_ngram);
    r.get("length_penalty", d.length_penalty);
  }
  if (auto* s = root.section("mcts")) {
    detail::Reader r(*s, "mcts");
    auto& m = c.decoding.mcts;
    r.get("c_puct", m.c_puct);
    r.get("num_simulations", m.num_simulations);
    r.get("expansion_top_p", m.expansion_top_p);
    r.get("pi_temperature", m.pi_temperature);
    r.get("reuse_subtree", m.reuse_subtree);
  }
  if (auto* s = root.section("eval")) {
    detail::Reader r(*s, "eval");
    std::vector<std::string> names;
    const bool present = s->contains("protocols");
    r.get("protocols", names);
    if (present) {
      c.eval.protocols.clear();
      for (const auto& n : names) {
        if (n == "base") c.eval.protocols.push_back(DiscProtocol::base);
        else if (n == "base_plus") c.eval.protocols.push_back(DiscProtocol::base_plus);
        else throw ConfigError("unknown protocol '" + n + "'");
      }
    }
    r.get("disc_epochs", c.eval.disc_epochs);
    r.get("disc_batch_size", c.eval.disc_batch_size);
    r.get("disc_lr", c.eval.disc_lr);
    r.get("train_fraction", c.eval.train_fraction);
  }
  if (auto* s = root.section("analyze")) {
    detail::Reader r(*s, "analyze");
    r.get("window", c.analyze_window);
  }
  if (auto* s = root.section("paths")) {
    detail::Reader r(*s, "paths");
    r.get("data_dir", c.paths.data_dir);
    r.get("checkpoint_dir", c.paths.checkpoint_dir);
    r.get("output_dir", c.paths.output_dir);
  }
  return c;
}

/// Applies "a.b=value". The value is parsed as JSON when possible and taken
/// as a string otherwise, so both "decode.top_p=0.9" and "task.name=copy" work.
inline void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override must look like section.field=value: '" + std::string(assignment) + "'");
  const std::string path(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty key in override '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    if (!node->is_object()) throw ConfigError("'" + path + "' does not name a field");
    start = dot + 1;
  }
}

/// Reads `path` (may be empty: all defaults), applies overrides in order and
/// validates the result.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config " + path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig c = run_config_from_json(doc);
  c.validate();
  return c;
}

}  // namespace selfgan
