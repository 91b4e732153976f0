#pragma once

// Teacher forcing, SelfGAN (cooperative outputs as MLE targets), the
// beam-search self-training ablation and a REINFORCE GAN comparator.

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "selfgan/core.hpp"
#include "selfgan/decoders.hpp"
#include "selfgan/evaluation.hpp"
#include "selfgan/models.hpp"

namespace selfgan {

SELFGAN_DEFINE_ERROR(ZeroGradient);
SELFGAN_DEFINE_ERROR(SchemaMismatch);

enum class CoopDecoder { das_local, das_global, coop_mcts, beam };

inline std::string to_string(CoopDecoder d) {
  switch (d) {
    case CoopDecoder::das_local: return "das_local";
    case CoopDecoder::das_global: return "das_global";
    case CoopDecoder::coop_mcts: return "coop_mcts";
    case CoopDecoder::beam: return "beam";
  }
  return "?";
}

inline CoopDecoder coop_decoder_from_string(std::string_view s) {
  for (auto d : {CoopDecoder::das_local, CoopDecoder::das_global, CoopDecoder::coop_mcts,
                 CoopDecoder::beam})
    if (s == to_string(d)) return d;
  throw InvariantViolation("unknown cooperative decoder '" + std::string(s) + "'");
}

inline DecoderKind decoder_kind(CoopDecoder d) {
  switch (d) {
    case CoopDecoder::das_local: return DecoderKind::das_local;
    case CoopDecoder::das_global: return DecoderKind::das_global;
    case CoopDecoder::coop_mcts: return DecoderKind::coop_mcts;
    case CoopDecoder::beam: return DecoderKind::beam;
  }
  return DecoderKind::beam;
}

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double gen_lr = 0.1;
  double disc_lr = 0.1;
  CoopDecoder coop_decoder = CoopDecoder::coop_mcts;
  DecoderSettings decoder;
  std::size_t checkpoint_every = 1;  // epochs; 0 disables periodic checkpoints
  std::uint64_t seed = 0;
  std::size_t log_every = 10;        // optimizer steps
  double rl_temperature = 1.0;
  double baseline_decay = 0.99;
  std::size_t disc_warmup_epochs = 1;

  void validate() const {
    if (epochs < 1) throw InvariantViolation("epochs must be >= 1");
    if (batch_size < 1) throw InvariantViolation("batch_size must be >= 1");
    if (!(gen_lr >= 0.0) || !(disc_lr >= 0.0)) throw InvariantViolation("learning rates must be >= 0");
    if (log_every < 1) throw InvariantViolation("log_every must be >= 1");
    if (!(rl_temperature > 0.0)) throw InvariantViolation("rl_temperature must be positive");
    if (!(baseline_decay >= 0.0 && baseline_decay < 1.0))
      throw InvariantViolation("baseline_decay must be in [0, 1)");
    decoder.validate();
  }
};

// ============================================================================
// TrainingTrace
// ============================================================================

struct TraceRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double gen_loss = std::numeric_limits<double>::quiet_NaN();
  double disc_loss = std::numeric_limits<double>::quiet_NaN();
  double disc_grad_norm = std::numeric_limits<double>::quiet_NaN();
  double gen_collinearity = std::numeric_limits<double>::quiet_NaN();
  double mean_d_coop = std::numeric_limits<double>::quiet_NaN();
  double mean_d_gen = std::numeric_limits<double>::quiet_NaN();
  double length_delta = std::numeric_limits<double>::quiet_NaN();
  double novelty_delta = std::numeric_limits<double>::quiet_NaN();
  double repetition3_delta = std::numeric_limits<double>::quiet_NaN();
};

class TrainingTrace {
 public:
  static const std::vector<std::string>& columns() {
    static const std::vector<std::string> cols{
        "step",         "epoch",         "gen_loss",      "disc_loss",
        "disc_grad_norm", "gen_collinearity", "mean_d_coop", "mean_d_gen",
        "length_delta", "novelty_delta", "repetition3_delta"};
    return cols;
  }

  void append(const TraceRecord& r) {
    if (!records_.empty() && r.step <= records_.back().step)
      throw InvariantViolation("trace steps must increase");
    records_.push_back(r);
  }
  void extend(const TrainingTrace& other) {
    for (const auto& r : other.records()) append(r);
  }
  const std::vector<TraceRecord>& records() const noexcept { return records_; }
  bool empty() const noexcept { return records_.empty(); }

  /// Column of doubles by name (step and epoch included).
  std::vector<double> column(std::string_view name) const {
    std::vector<double> out;
    for (const auto& r : records_) out.push_back(field(r, name));
    return out;
  }

  std::string to_csv() const {
    std::string out;
    for (std::size_t i = 0; i < columns().size(); ++i) out += (i ? "," : "") + columns()[i];
    out += '\n';
    for (const auto& r : records_) {
      out += std::to_string(r.step) + ',' + std::to_string(r.epoch);
      for (std::size_t i = 2; i < columns().size(); ++i) out += ',' + format_double(field(r, columns()[i]));
      out += '\n';
    }
    return out;
  }

  static TrainingTrace from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw SchemaMismatch("empty trace");
    if (split(line) != columns()) throw SchemaMismatch("unexpected trace header: " + line);
    TrainingTrace t;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cells = split(line);
      if (cells.size() != columns().size())
        throw SchemaMismatch("line " + std::to_string(line_no) + ": wrong column count");
      TraceRecord r;
      r.step = static_cast<std::size_t>(parse_double(cells[0]));
      r.epoch = static_cast<std::size_t>(parse_double(cells[1]));
      for (std::size_t i = 2; i < cells.size(); ++i) field(r, columns()[i]) = parse_double(cells[i]);
      t.append(r);
    }
    return t;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write trace " + path.string());
    out << to_csv();
  }
  static TrainingTrace load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trace " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_csv(ss.str());
  }

 private:
  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      cells.push_back(cell);
    }
    return cells;
  }

  static double field(const TraceRecord& r, std::string_view name) {
    return field(const_cast<TraceRecord&>(r), name);
  }
  static double& field(TraceRecord& r, std::string_view name) {
    static double step_value;
    if (name == "gen_loss") return r.gen_loss;
    if (name == "disc_loss") return r.disc_loss;
    if (name == "disc_grad_norm") return r.disc_grad_norm;
    if (name == "gen_collinearity") return r.gen_collinearity;
    if (name == "mean_d_coop") return r.mean_d_coop;
    if (name == "mean_d_gen") return r.mean_d_gen;
    if (name == "length_delta") return r.length_delta;
    if (name == "novelty_delta") return r.novelty_delta;
    if (name == "repetition3_delta") return r.repetition3_delta;
    if (name == "step") return step_value = static_cast<double>(r.step);
    if (name == "epoch") return step_value = static_cast<double>(r.epoch);
    throw SchemaMismatch("unknown trace column '" + std::string(name) + "'");
  }

  std::vector<TraceRecord> records_;
};

// ============================================================================
// Gradient collinearity
// ============================================================================

template <class M>
concept GradientModel = requires(const M& m, std::span<const TokenId> s) {
  { m.nll_gradient(s, s) } -> std::convertible_to<std::vector<double>>;
};

struct CollinearityItem {
  const Condition* condition;
  const Sequence* model_output;
  const Sequence* reference;
};

/// Mean over items of cos(grad NLL(x, s_model), grad NLL(x, s_ref)).
template <GradientModel M>
double gradient_collinearity(const M& gen, std::span<const CollinearityItem> batch) {
  if (batch.empty()) throw InvariantViolation("collinearity needs a non-empty batch");
  double total = 0.0;
  for (const auto& item : batch) {
    const auto gm = gen.nll_gradient(item.condition->token_ids(), item.model_output->token_ids());
    const auto gr = gen.nll_gradient(item.condition->token_ids(), item.reference->token_ids());
    const double nm = l2_norm(gm), nr = l2_norm(gr);
    if (nm == 0.0 || nr == 0.0) throw ZeroGradient("NLL gradient has zero norm");
    total += std::clamp(dot(gm, gr) / (nm * nr), -1.0, 1.0);
  }
  return total / static_cast<double>(batch.size());
}

// ============================================================================
// Loops
// ============================================================================

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                           RandomSource& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < n; s += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
  return batches;
}

inline RandomSource epoch_rng(std::uint64_t seed, std::uint64_t stream, std::size_t epoch) {
  return RandomSource(seed).derive(stream).derive(epoch);
}

/// Fills the analysis columns of a trace record for one batch: mean D of the
/// training targets vs the generator's own beam outputs, collinearity of
/// target vs reference gradients, and human-likeness deltas of beam outputs.
inline void measure_batch(TraceRecord& rec, const GeneratorModel& gen,
                          const DiscriminatorModel& disc, const std::vector<ExamplePair>& refs,
                          const std::vector<ExamplePair>& targets, const DecoderSettings& settings) {
  std::vector<Sequence> beam_out, ref_seqs;
  std::vector<Condition> conds;
  std::vector<CollinearityItem> items;
  double d_target = 0.0, d_gen = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& cond = refs[i].condition;
    beam_out.push_back(decode_beam(cond, gen, settings.decode).sequence);
    d_target += disc.score(PrefixView{cond.token_ids(), targets[i].reference.token_ids()});
    d_gen += disc.score(PrefixView{cond.token_ids(), beam_out.back().token_ids()});
    ref_seqs.push_back(refs[i].reference);
    conds.push_back(cond);
  }
  for (std::size_t i = 0; i < refs.size(); ++i)
    items.push_back({&refs[i].condition, &targets[i].reference, &refs[i].reference});
  const double n = static_cast<double>(refs.size());
  rec.mean_d_coop = d_target / n;
  rec.mean_d_gen = d_gen / n;
  try {
    rec.gen_collinearity = gradient_collinearity(gen, items);
  } catch (const ZeroGradient&) {
    rec.gen_collinearity = std::numeric_limits<double>::quiet_NaN();
  }
  const auto deltas = humanlike_stats(beam_out, ref_seqs, conds);
  rec.length_delta = deltas.length;
  rec.novelty_delta = deltas.novelty;
  rec.repetition3_delta = deltas.repetition3;
}

template <class Fn>
std::vector<ExamplePair> gather(const std::vector<ExamplePair>& data,
                                const std::vector<std::size_t>& idx, Fn&& fn) {
  std::vector<ExamplePair> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(fn(i, data[i]));
  return out;
}

}  // namespace detail

/// Streams keyed off TrainConfig::seed so that runs resume bit-identically.
enum RngStream : std::uint64_t { kMleStream = 1, kWarmupStream = 2, kSelfganStream = 3, kRlStream = 4 };

/// Shuffled-minibatch teacher forcing.
inline TrainingTrace train_mle(GeneratorModel& gen, const std::vector<ExamplePair>& dataset,
                               const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw InvariantViolation("MLE training needs a non-empty dataset");
  TrainingTrace trace;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    RandomSource rng = detail::epoch_rng(config.seed, kMleStream, epoch);
    for (const auto& idx : detail::epoch_batches(dataset.size(), config.batch_size, rng)) {
      const auto batch = detail::gather(dataset, idx, [](std::size_t, const ExamplePair& e) { return e; });
      const double loss = train_generator_mle(gen, batch, config.gen_lr);
      if (step % config.log_every == 0) {
        TraceRecord r;
        r.step = step;
        r.epoch = epoch;
        r.gen_loss = loss;
        trace.append(r);
      }
      ++step;
    }
  }
  return trace;
}

/// Pre-GAN discriminator training: human = references, machine = beam
/// outputs of the (frozen) generator.
inline double warmup_discriminator(DiscriminatorModel& disc, const GeneratorModel& gen,
                                   const std::vector<ExamplePair>& dataset,
                                   const TrainConfig& config) {
  double loss = std::numeric_limits<double>::quiet_NaN();
  if (config.disc_warmup_epochs == 0) return loss;
  std::vector<ExamplePair> beam_out;
  beam_out.reserve(dataset.size());
  for (const auto& e : dataset)
    beam_out.emplace_back(e.condition, decode_beam(e.condition, gen, config.decoder.decode).sequence);
  for (std::size_t epoch = 0; epoch < config.disc_warmup_epochs; ++epoch) {
    RandomSource rng = detail::epoch_rng(config.seed, kWarmupStream, epoch);
    for (const auto& idx : detail::epoch_batches(dataset.size(), config.batch_size, rng)) {
      const auto human = detail::gather(dataset, idx, [](std::size_t, const ExamplePair& e) { return e; });
      const auto machine = detail::gather(beam_out, idx, [](std::size_t, const ExamplePair& e) { return e; });
      loss = train_discriminator(disc, human, machine, config.disc_lr);
    }
  }
  return loss;
}

/// Mutable position in a multi-epoch run; enough to resume from a checkpoint.
struct TrainProgress {
  std::size_t epoch = 0;  // next epoch to run
  std::size_t step = 0;   // next optimizer step index
};

/// One pass of the SelfGAN loop. Per minibatch:
///   1. s_coop <- cooperative decoder(x, gen, disc) for every x
///   2. one generator MLE step on (X, S_coop)
///   3. one discriminator step with human = (X, S_ref), machine = (X, S_coop)
/// The discriminator never supplies a reward to the generator.
inline TrainingTrace selfgan_epoch(GeneratorModel& gen, DiscriminatorModel& disc,
                                   const std::vector<ExamplePair>& dataset,
                                   const TrainConfig& config, TrainProgress& progress) {
  TrainingTrace trace;
  const DecoderKind kind = decoder_kind(config.coop_decoder);
  RandomSource rng = detail::epoch_rng(config.seed, kSelfganStream, progress.epoch);
  for (const auto& idx : detail::epoch_batches(dataset.size(), config.batch_size, rng)) {
    const auto refs = detail::gather(dataset, idx, [](std::size_t, const ExamplePair& e) { return e; });
    const auto coop = detail::gather(dataset, idx, [&](std::size_t i, const ExamplePair& e) {
      RandomSource r = rng.derive(i);
      return ExamplePair(e.condition,
                         run_decoder(kind, e.condition, gen, &disc, config.decoder, r).sequence);
    });
    TraceRecord rec;
    const bool logged = progress.step % config.log_every == 0;
    if (logged) detail::measure_batch(rec, gen, disc, refs, coop, config.decoder);
    rec.gen_loss = train_generator_mle(gen, coop, config.gen_lr);
    rec.disc_loss = train_discriminator(disc, refs, coop, config.disc_lr);
    rec.disc_grad_norm = l2_norm(disc.parameters().grads());
    if (logged) {
      rec.step = progress.step;
      rec.epoch = progress.epoch;
      trace.append(rec);
    }
    ++progress.step;
  }
  ++progress.epoch;
  return trace;
}

/// Called after every epoch with the progress reached so far.
using EpochHook = std::function<void(const GeneratorModel&, const DiscriminatorModel&,
                                     const TrainProgress&, const TrainingTrace&)>;

inline TrainingTrace train_selfgan(GeneratorModel& gen, DiscriminatorModel& disc,
                                   const std::vector<ExamplePair>& dataset,
                                   const TrainConfig& config, TrainProgress progress = {},
                                   const EpochHook& on_epoch = {}) {
  config.validate();
  if (dataset.empty()) throw InvariantViolation("SelfGAN training needs a non-empty dataset");
  TrainingTrace trace;
  while (progress.epoch < config.epochs) {
    trace.extend(selfgan_epoch(gen, disc, dataset, config, progress));
    if (on_epoch) on_epoch(gen, disc, progress, trace);
  }
  return trace;
}

/// REINFORCE comparator: sample at rl_temperature, reward = D(complete
/// sample), advantage = reward - moving-average baseline, then the usual
/// discriminator step with the samples as machine examples.
inline TrainingTrace train_rlgan_baseline(GeneratorModel& gen, DiscriminatorModel& disc,
                                          const std::vector<ExamplePair>& dataset,
                                          const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw InvariantViolation("RL-GAN training needs a non-empty dataset");
  TrainingTrace trace;
  DecodeConfig sampling = config.decoder.decode;
  sampling.temperature = config.rl_temperature;
  std::optional<double> baseline;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    RandomSource rng = detail::epoch_rng(config.seed, kRlStream, epoch);
    for (const auto& idx : detail::epoch_batches(dataset.size(), config.batch_size, rng)) {
      const auto refs = detail::gather(dataset, idx, [](std::size_t, const ExamplePair& e) { return e; });
      const auto samples = detail::gather(dataset, idx, [&](std::size_t i, const ExamplePair& e) {
        RandomSource r = rng.derive(i);
        return ExamplePair(e.condition, decode_sampling(e.condition, gen, sampling, r).sequence);
      });
      std::vector<double> rewards;
      double mean_reward = 0.0;
      for (const auto& s : samples) {
        rewards.push_back(disc.score(PrefixView{s.condition.token_ids(), s.reference.token_ids()}));
        mean_reward += rewards.back();
      }
      mean_reward /= static_cast<double>(samples.size());
      if (!baseline) baseline = mean_reward;

      TraceRecord rec;
      const bool logged = step % config.log_every == 0;
      if (logged) detail::measure_batch(rec, gen, disc, refs, samples, config.decoder);

      auto& params = gen.parameters();
      params.zero_grad();
      const double inv_b = 1.0 / static_cast<double>(samples.size());
      double pg_loss = 0.0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const double adv = rewards[i] - *baseline;
        pg_loss += adv * inv_b *
                   gen.accumulate_nll(samples[i].condition.token_ids(),
                                      samples[i].reference.token_ids(), adv * inv_b, params.grads());
      }
      if (!std::isfinite(pg_loss)) throw NonFiniteLoss("policy-gradient loss is not finite");
      params.mark_backward();
      params.sgd_step(config.gen_lr);
      baseline = config.baseline_decay * *baseline + (1.0 - config.baseline_decay) * mean_reward;

      rec.gen_loss = pg_loss;
      rec.disc_loss = train_discriminator(disc, refs, samples, config.disc_lr);
      rec.disc_grad_norm = l2_norm(disc.parameters().grads());
      if (logged) {
        rec.step = step;
        rec.epoch = epoch;
        trace.append(rec);
      }
      ++step;
    }
  }
  return trace;
}

/// Fraction of conditions whose greedy output equals the reference exactly.
inline double greedy_accuracy(const GeneratorModel& gen, const std::vector<ExamplePair>& data,
                              const DecodeConfig& config) {
  if (data.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& ex : data)
    if (decode_greedy(ex.condition, gen, config).sequence == ex.reference) ++ok;
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

}  // namespace selfgan
