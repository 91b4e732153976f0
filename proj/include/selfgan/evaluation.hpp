#pragma once

// N-gram metrics, human-likeness statistics and the discriminator-based
// Base / Base+ protocols.
//
// All metrics operate on content tokens: a trailing eos is ignored.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "selfgan/core.hpp"
#include "selfgan/models.hpp"

namespace selfgan {

SELFGAN_DEFINE_ERROR(MissingModelEntry);

namespace detail {

using NgramCounts = std::map<std::vector<TokenId>, std::size_t>;

inline NgramCounts count_ngrams(std::span<const TokenId> s, std::size_t n) {
  NgramCounts counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++counts[std::vector<TokenId>(s.begin() + i, s.begin() + i + n)];
  return counts;
}

inline std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// Clipped n-gram statistics behind BLEU-4, exposed for oracle checks.
struct BleuStats {
  std::size_t matches[4] = {0, 0, 0, 0};
  std::size_t totals[4] = {0, 0, 0, 0};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;  // closest reference length, shorter on ties
};

inline BleuStats bleu_stats(std::span<const TokenId> hyp,
                            const std::vector<std::span<const TokenId>>& refs) {
  BleuStats st;
  st.hyp_length = hyp.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto hyp_counts = detail::count_ngrams(hyp, n);
    detail::NgramCounts max_ref;
    for (const auto& r : refs)
      for (const auto& [g, c] : detail::count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : hyp_counts) {
      auto it = max_ref.find(g);
      st.matches[n - 1] += std::min(c, it == max_ref.end() ? std::size_t{0} : it->second);
      st.totals[n - 1] += c;
    }
  }
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) {
      return len > hyp.size() ? len - hyp.size() : hyp.size() - len;
    };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  st.ref_length = best;
  return st;
}

/// BLEU-4 from clipped statistics. For n >= 2, precisions get add-one
/// smoothing (numerator and denominator) when the hypothesis has fewer than 4
/// tokens or the raw precision is zero. No unigram match gives 0.
inline double bleu_from_stats(const BleuStats& st) {
  if (st.hyp_length == 0 || st.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(st.matches[0]) / static_cast<double>(st.totals[0]));
  for (std::size_t n = 1; n < 4; ++n) {
    double num = static_cast<double>(st.matches[n]);
    double den = static_cast<double>(st.totals[n]);
    if (st.hyp_length < 4 || st.matches[n] == 0) {
      num += 1.0;
      den += 1.0;
    }
    log_sum += std::log(num / den);
  }
  const double c = static_cast<double>(st.hyp_length), r = static_cast<double>(st.ref_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

inline double bleu4(const Sequence& hypothesis, const std::vector<Sequence>& references) {
  if (references.empty()) throw InvariantViolation("bleu4 needs at least one reference");
  std::vector<std::span<const TokenId>> refs;
  for (const auto& r : references) refs.push_back(r.content());
  return bleu_from_stats(bleu_stats(hypothesis.content(), refs));
}

enum class RougeVariant { rouge1, rougeL };

struct RougeScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline RougeScore rouge_from_counts(std::size_t overlap, std::size_t hyp_len, std::size_t ref_len) {
  RougeScore s;
  if (hyp_len > 0) s.precision = static_cast<double>(overlap) / static_cast<double>(hyp_len);
  if (ref_len > 0) s.recall = static_cast<double>(overlap) / static_cast<double>(ref_len);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

/// Overlap count behind ROUGE: clipped unigram intersection or LCS length.
inline std::size_t rouge_overlap(std::span<const TokenId> hyp, std::span<const TokenId> ref,
                                 RougeVariant variant) {
  if (variant == RougeVariant::rougeL) return detail::lcs_length(hyp, ref);
  const auto h = detail::count_ngrams(hyp, 1), r = detail::count_ngrams(ref, 1);
  std::size_t overlap = 0;
  for (const auto& [g, c] : h) {
    auto it = r.find(g);
    if (it != r.end()) overlap += std::min(c, it->second);
  }
  return overlap;
}

inline RougeScore rouge(const Sequence& hypothesis, const Sequence& reference, RougeVariant variant) {
  const auto h = hypothesis.content(), r = reference.content();
  return rouge_from_counts(rouge_overlap(h, r, variant), h.size(), r.size());
}

// ----------------------------------------------------------------------------
// Human-likeness statistics
// ----------------------------------------------------------------------------

inline double output_length(const Sequence& s) { return static_cast<double>(s.content().size()); }

/// Fraction of output tokens absent from the condition (0 for empty output).
inline double novelty(const Sequence& s, const Condition& condition) {
  const auto c = s.content();
  if (c.empty()) return 0.0;
  const std::set<TokenId> src(condition.token_ids().begin(), condition.token_ids().end());
  std::size_t novel = 0;
  for (TokenId t : c)
    if (!src.count(t)) ++novel;
  return static_cast<double>(novel) / static_cast<double>(c.size());
}

/// Fraction of n-gram occurrences whose n-gram appears more than once.
inline double ngram_repetition(const Sequence& s, std::size_t n = 3) {
  const auto c = s.content();
  if (c.size() < n) return 0.0;
  const auto counts = detail::count_ngrams(c, n);
  std::size_t total = 0, repeated = 0;
  for (const auto& [g, k] : counts) {
    total += k;
    if (k > 1) repeated += k;
  }
  return static_cast<double>(repeated) / static_cast<double>(total);
}

struct HumanlikeDeltas {
  double length = 0.0, novelty = 0.0, repetition3 = 0.0;
};

/// mean(statistic over outputs) - mean(statistic over references).
inline HumanlikeDeltas humanlike_stats(const std::vector<Sequence>& outputs,
                                       const std::vector<Sequence>& references,
                                       const std::vector<Condition>& conditions) {
  if (outputs.size() != references.size() || outputs.size() != conditions.size())
    throw InvariantViolation("humanlike_stats needs equal-length lists");
  HumanlikeDeltas d;
  if (outputs.empty()) return d;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    d.length += output_length(outputs[i]) - output_length(references[i]);
    d.novelty += novelty(outputs[i], conditions[i]) - novelty(references[i], conditions[i]);
    d.repetition3 += ngram_repetition(outputs[i]) - ngram_repetition(references[i]);
  }
  const double n = static_cast<double>(outputs.size());
  d.length /= n;
  d.novelty /= n;
  d.repetition3 /= n;
  return d;
}

// ----------------------------------------------------------------------------
// Discriminator metrics
// ----------------------------------------------------------------------------

enum class DiscProtocol { base, base_plus };

inline std::string to_string(DiscProtocol p) { return p == DiscProtocol::base ? "base" : "base_plus"; }

inline constexpr const char* kBaseModelName = "mle_beam";

struct DiscMetricConfig {
  ModelArch arch;  // vocab_size must be set by the caller
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 0.5;
  double train_fraction = 0.5;
};

/// Index split used by the protocols; train and evaluation conditions never
/// overlap.
struct ProtocolSplit {
  std::vector<std::size_t> train, eval;
};

inline ProtocolSplit protocol_split(const std::vector<ExamplePair>& references, double fraction,
                                    RandomSource& rng) {
  std::vector<std::size_t> idx(references.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size())));
  ProtocolSplit s{{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)},
                  {idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end()}};
  std::set<Condition> train_conditions;
  for (std::size_t i : s.train) train_conditions.insert(references[i].condition);
  for (std::size_t i : s.eval)
    if (train_conditions.count(references[i].condition))
      throw InvariantViolation("evaluation condition leaks into discriminator training");
  return s;
}

using ModelOutputs = std::map<std::string, std::vector<ExamplePair>>;

/// Trains a fresh discriminator (machine = "mle_beam" outputs for Base, all
/// models' outputs for Base+) on one half of the conditions and reports, per
/// model, the fraction of its outputs on the other half scored above 0.5.
/// Every model's outputs must be index-aligned with `references`.
inline std::map<std::string, double> discriminator_metric(DiscProtocol protocol,
                                                          const ModelOutputs& model_outputs,
                                                          const std::vector<ExamplePair>& references,
                                                          const DiscMetricConfig& config,
                                                          RandomSource& rng) {
  if (protocol == DiscProtocol::base && !model_outputs.count(kBaseModelName))
    throw MissingModelEntry("base protocol needs outputs named 'mle_beam'");
  if (protocol == DiscProtocol::base_plus && model_outputs.size() < 2)
    throw MissingModelEntry("base_plus protocol needs at least two models");
  for (const auto& [name, outs] : model_outputs) {
    if (outs.size() != references.size())
      throw InvariantViolation("outputs of '" + name + "' are not aligned with the references");
    for (std::size_t i = 0; i < outs.size(); ++i)
      if (!(outs[i].condition == references[i].condition))
        throw InvariantViolation("outputs of '" + name + "' are not aligned with the references");
  }

  const ProtocolSplit split = protocol_split(references, config.train_fraction, rng);
  DiscriminatorModel disc(config.arch);
  disc.initialize(rng);

  std::vector<std::size_t> order = split.train;
  std::vector<ExamplePair> human, machine;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      human.clear();
      machine.clear();
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        human.push_back(references[i]);
        if (protocol == DiscProtocol::base) {
          machine.push_back(model_outputs.at(kBaseModelName)[i]);
        } else {
          for (const auto& [name, outs] : model_outputs) machine.push_back(outs[i]);
        }
      }
      train_discriminator(disc, human, machine, config.lr);
    }
  }

  std::map<std::string, double> pct;
  for (const auto& [name, outs] : model_outputs) {
    std::size_t human_like = 0;
    for (std::size_t i : split.eval)
      if (disc.score(PrefixView{outs[i].condition.token_ids(), outs[i].reference.token_ids()}) > 0.5)
        ++human_like;
    pct[name] = split.eval.empty() ? 0.0
                                   : static_cast<double>(human_like) / static_cast<double>(split.eval.size());
  }
  return pct;
}

/// One row of the results grid.
struct EvalReport {
  std::string generator;
  std::string decoder;
  double bleu4 = 0.0;
  double rouge1_f = 0.0;
  double rougeL_f = 0.0;
  std::optional<double> pct_human_base;
  std::optional<double> pct_human_base_plus;
  double length_delta = 0.0, novelty_delta = 0.0, repetition3_delta = 0.0;
  std::optional<double> task_validity_rate;
};

/// Corpus averages of sentence-level BLEU-4 and ROUGE F1 plus deltas.
inline void fill_ngram_metrics(EvalReport& row, const std::vector<ExamplePair>& outputs,
                               const std::vector<ExamplePair>& references) {
  if (outputs.size() != references.size())
    throw InvariantViolation("outputs and references differ in length");
  std::vector<Sequence> outs, refs;
  std::vector<Condition> conds;
  double b = 0, r1 = 0, rl = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i].reference;
    const auto& ref = references[i].reference;
    b += bleu4(o, {ref});
    r1 += rouge(o, ref, RougeVariant::rouge1).f1;
    rl += rouge(o, ref, RougeVariant::rougeL).f1;
    outs.push_back(o);
    refs.push_back(ref);
    conds.push_back(references[i].condition);
  }
  const double n = outputs.empty() ? 1.0 : static_cast<double>(outputs.size());
  row.bleu4 = b / n;
  row.rouge1_f = r1 / n;
  row.rougeL_f = rl / n;
  const auto d = humanlike_stats(outs, refs, conds);
  row.length_delta = d.length;
  row.novelty_delta = d.novelty;
  row.repetition3_delta = d.repetition3;
}

inline const std::vector<std::string>& eval_report_columns() {
  static const std::vector<std::string> cols{
      "generator",        "decoder",       "bleu4",         "rouge1_f",
      "rougeL_f",         "pct_human_base", "pct_human_base_plus", "length_delta",
      "novelty_delta",    "repetition3_delta", "task_validity_rate"};
  return cols;
}

namespace detail {
inline std::vector<std::string> report_cells(const EvalReport& r, int precision) {
  auto num = [&](double v) {
    if (precision < 0) return format_double(v);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return std::string(buf);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(precision < 0 ? "" : "-"); };
  return {r.generator,        r.decoder,          num(r.bleu4),           num(r.rouge1_f),
          num(r.rougeL_f),    opt(r.pct_human_base), opt(r.pct_human_base_plus), num(r.length_delta),
          num(r.novelty_delta), num(r.repetition3_delta), opt(r.task_validity_rate)};
}
}  // namespace detail

/// Empty cells mark metrics whose protocol was not requested.
inline std::string eval_report_csv(const std::vector<EvalReport>& rows) {
  std::string out;
  const auto& cols = eval_report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  for (const auto& r : rows) {
    const auto cells = detail::report_cells(r, -1);
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += '\n';
  }
  return out;
}

/// Fixed-width table grouped by generator, four decimals.
inline std::string eval_report_table(const std::vector<EvalReport>& rows) {
  const auto& cols = eval_report_columns();
  std::vector<std::vector<std::string>> grid{cols};
  for (const auto& r : rows) grid.push_back(detail::report_cells(r, 4));
  std::vector<std::size_t> width(cols.size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::string out;
  auto rule = [&] {
    for (std::size_t i = 0; i < width.size(); ++i) out += (i ? "-+-" : "") + std::string(width[i], '-');
    out += '\n';
  };
  for (std::size_t l = 0; l < grid.size(); ++l) {
    if (l == 1) rule();
    if (l > 1 && grid[l][0] != grid[l - 1][0]) rule();
    for (std::size_t i = 0; i < grid[l].size(); ++i) {
      const auto& c = grid[l][i];
      const std::string pad(width[i] - c.size(), ' ');
      out += (i ? " | " : "") + (i < 2 ? c + pad : pad + c);
    }
    out += '\n';
  }
  return out;
}

}  // namespace selfgan
