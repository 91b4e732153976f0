#pragma once

// Generator-only decoders (greedy, sampling, beam search) and the step-myopic
// cooperative decoders that rerank with a discriminator (DAS-local,
// DAS-global).
//
// Every decoder forces eos as the final token once the prefix reaches
// max_length - 1, so all outputs are terminated and within max_length.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "selfgan/core.hpp"
#include "selfgan/models.hpp"

namespace selfgan {

template <class P>
concept PolicyModel = requires(const P& p, PrefixView s) {
  { p.next_token_distribution(s) } -> std::convertible_to<TokenDistribution>;
};

template <class D>
concept ValueModel = requires(const D& d, PrefixView s) {
  { d.score(s) } -> std::convertible_to<double>;
};

template <ValueModel D>
double value_log_score(const D& disc, PrefixView s) {
  if constexpr (requires { { disc.log_score(s) } -> std::convertible_to<double>; })
    return disc.log_score(s);
  else
    return std::log(std::max(disc.score(s), DiscriminatorModel::kScoreEpsilon));
}

struct DecodeConfig {
  std::size_t max_length = 32;
  double temperature = 1.0;
  std::optional<std::size_t> top_k;
  std::optional<double> top_p;
  std::size_t beam_size = 4;
  std::size_t das_candidates = 8;
  double das_alpha = 1.0;
  std::size_t num_samples = 10;
  std::optional<std::size_t> block_repeat_ngram;
  double length_penalty = 0.0;

  void validate() const {
    if (max_length < 1) throw InvariantViolation("max_length must be >= 1");
    if (!(temperature > 0.0)) throw InvariantViolation("temperature must be positive");
    if (top_k && *top_k == 0) throw InvariantViolation("top_k must be >= 1");
    if (top_p && !(*top_p > 0.0 && *top_p <= 1.0))
      throw InvariantViolation("top_p must be in (0, 1]");
    if (beam_size < 1) throw InvariantViolation("beam_size must be >= 1");
    if (num_samples < 1) throw InvariantViolation("num_samples must be >= 1");
    if (das_candidates < beam_size) throw InvariantViolation("das_candidates must be >= beam_size");
    if (!(das_alpha >= 0.0)) throw InvariantViolation("das_alpha must be non-negative");
    if (block_repeat_ngram && *block_repeat_ngram == 0)
      throw InvariantViolation("block_repeat_ngram must be >= 1");
  }
};

struct DecodeResult {
  Sequence sequence;
  double gen_logprob = 0.0;
  bool forced_termination = false;  // eos was imposed by max_length
};

namespace detail {

/// Indices sorted by descending probability; ties by ascending index.
inline std::vector<std::size_t> descending_order(const std::vector<double>& p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return idx;
}

inline bool forced_eos(std::size_t prefix_len, std::size_t max_length) {
  return prefix_len + 1 >= max_length;
}

/// True when appending `tok` would repeat an n-gram already in `prefix`.
inline bool repeats_ngram(std::span<const TokenId> prefix, TokenId tok, std::size_t n) {
  if (tok == kEosId || prefix.size() + 1 < n || n == 0) return false;
  const std::size_t t = prefix.size();
  if (n == 1) return std::find(prefix.begin(), prefix.end(), tok) != prefix.end();
  for (std::size_t i = 0; i + n <= t; ++i) {
    bool same = prefix[i + n - 1] == tok;
    for (std::size_t k = 0; same && k + 1 < n; ++k) same = prefix[i + k] == prefix[t - (n - 1) + k];
    if (same) return true;
  }
  return false;
}

inline Sequence make_sequence(std::vector<TokenId> ids) {
  return Sequence(std::move(ids), kEosId, kPadId);
}

}  // namespace detail

/// Temperature first (log-probabilities divided by temperature), then top-k,
/// then the smallest descending prefix whose mass reaches top_p; renormalized.
inline TokenDistribution filter_top_k_top_p(const TokenDistribution& dist,
                                            std::optional<std::size_t> top_k,
                                            std::optional<double> top_p, double temperature) {
  std::vector<double> p = dist.probs();
  if (temperature != 1.0) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : p)
      if (x > 0.0) mx = std::max(mx, std::log(x) / temperature);
    for (double& x : p) x = x > 0.0 ? std::exp(std::log(x) / temperature - mx) : 0.0;
    double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p) x /= s;
  }
  const auto order = detail::descending_order(p);
  std::size_t positive = 0;
  for (double x : p)
    if (x > 0.0) ++positive;
  std::size_t keep = positive;
  if (top_k) keep = std::min(keep, *top_k);
  if (top_p && *top_p < 1.0) {
    double total = 0.0;
    for (std::size_t i = 0; i < keep; ++i) total += p[order[i]];
    double acc = 0.0;
    std::size_t n = 0;
    while (n < keep) {
      acc += p[order[n++]];
      if (acc >= *top_p * total * (1.0 - 1e-12)) break;
    }
    keep = n;
  }
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = p[order[i]];
  return TokenDistribution::from_weights(std::move(out), kPadId);
}

template <PolicyModel P>
DecodeResult decode_greedy(const Condition& condition, const P& gen, const DecodeConfig& config) {
  std::vector<TokenId> out;
  DecodeResult r;
  while (out.empty() || out.back() != kEosId) {
    const auto dist = gen.next_token_distribution(PrefixView{condition.token_ids(), out});
    TokenId tok = dist.argmax();
    if (detail::forced_eos(out.size(), config.max_length) && tok != kEosId) {
      tok = kEosId;
      r.forced_termination = true;
    }
    r.gen_logprob += std::log(dist[tok]);
    out.push_back(tok);
  }
  r.sequence = detail::make_sequence(std::move(out));
  return r;
}

template <PolicyModel P>
DecodeResult decode_sampling(const Condition& condition, const P& gen, const DecodeConfig& config,
                             RandomSource& rng) {
  std::vector<TokenId> out;
  DecodeResult r;
  while (out.empty() || out.back() != kEosId) {
    const auto dist = gen.next_token_distribution(PrefixView{condition.token_ids(), out});
    TokenId tok;
    if (detail::forced_eos(out.size(), config.max_length)) {
      tok = kEosId;
      r.forced_termination = true;
    } else {
      tok = sample_categorical(filter_top_k_top_p(dist, config.top_k, config.top_p,
                                                  config.temperature),
                               rng, kPadId);
    }
    r.gen_logprob += std::log(dist[tok]);
    out.push_back(tok);
  }
  r.sequence = detail::make_sequence(std::move(out));
  return r;
}

namespace detail {

struct Hypothesis {
  std::vector<TokenId> tokens;
  double logp = 0.0;
  bool forced = false;
};

struct Candidate {
  std::size_t parent;
  TokenId token;
  double logp;
  double key;
  bool forced;
};

/// Beam search whose per-step ranking key is either the cumulative generator
/// log-probability or, when `rescore` is set, that value plus a bonus computed
/// on the top `pool_size` candidates. At each step the best `beam_size`
/// candidates are selected; those ending in eos join the finished pool and
/// the rest continue. Search stops once beam_size hypotheses have finished.
template <PolicyModel P, class Rescore>
DecodeResult beam_core(const Condition& condition, const P& gen, const DecodeConfig& config,
                       std::size_t pool_size, Rescore&& rescore) {
  std::vector<Hypothesis> live{Hypothesis{}};
  struct Finished {
    Hypothesis hyp;
    double score;
  };
  std::vector<Finished> finished;
  std::vector<Candidate> cands;
  for (std::size_t step = 0; step < config.max_length && !live.empty(); ++step) {
    cands.clear();
    const bool force = forced_eos(step, config.max_length);
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto dist =
          gen.next_token_distribution(PrefixView{condition.token_ids(), live[b].tokens});
      if (force) {
        cands.push_back({b, kEosId, live[b].logp + std::log(dist[kEosId]), 0.0, true});
        continue;
      }
      for (std::size_t tok = 0; tok < dist.size(); ++tok) {
        const TokenId id = static_cast<TokenId>(tok);
        if (id == kPadId || dist[id] <= 0.0) continue;
        if (config.block_repeat_ngram &&
            repeats_ngram(live[b].tokens, id, *config.block_repeat_ngram))
          continue;
        cands.push_back({b, id, live[b].logp + std::log(dist[id]), 0.0, false});
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logp > b.logp; });
    std::size_t pool = cands.size();
    for (auto& c : cands) c.key = c.logp;
    if constexpr (!std::is_same_v<std::decay_t<Rescore>, std::nullptr_t>) {
      pool = std::min(pool, pool_size);
      std::vector<TokenId> scratch;
      for (std::size_t i = 0; i < pool; ++i) {
        scratch = live[cands[i].parent].tokens;
        scratch.push_back(cands[i].token);
        cands[i].key = cands[i].logp + rescore(PrefixView{condition.token_ids(), scratch});
      }
      std::stable_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(pool),
                       [](const Candidate& a, const Candidate& b) { return a.key > b.key; });
    }
    const std::size_t take = std::min(pool, config.beam_size);
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < take; ++i) {
      const auto& c = cands[i];
      Hypothesis h{live[c.parent].tokens, c.logp, c.forced};
      h.tokens.push_back(c.token);
      if (c.token == kEosId) {
        const double len = static_cast<double>(h.tokens.size());
        const double score =
            config.length_penalty == 0.0 ? c.key : c.key / std::pow(len, config.length_penalty);
        finished.push_back({std::move(h), score});
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (finished.size() >= config.beam_size) break;
  }
  if (finished.empty()) throw InvariantViolation("beam search produced no hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (finished[i].score > finished[best].score) best = i;
  DecodeResult r;
  r.gen_logprob = finished[best].hyp.logp;
  r.forced_termination = finished[best].hyp.forced;
  r.sequence = make_sequence(std::move(finished[best].hyp.tokens));
  return r;
}

}  // namespace detail

template <PolicyModel P>
DecodeResult decode_beam(const Condition& condition, const P& gen, const DecodeConfig& config) {
  return detail::beam_core(condition, gen, config, 0, nullptr);
}

/// Beam search where the das_candidates best extensions by generator score
/// are reranked by log p_gen(prefix) + das_alpha * log D(prefix).
template <PolicyModel P, ValueModel D>
DecodeResult decode_das_local(const Condition& condition, const P& gen, const D& disc,
                              const DecodeConfig& config) {
  return detail::beam_core(condition, gen, config, config.das_candidates, [&](PrefixView s) {
    return config.das_alpha * value_log_score(disc, s);
  });
}

/// Samples num_samples complete outputs and keeps the one the discriminator
/// scores highest (ties: higher generator log-prob, then earlier sample).
template <PolicyModel P, ValueModel D>
DecodeResult decode_das_global(const Condition& condition, const P& gen, const D& disc,
                               const DecodeConfig& config, RandomSource& rng) {
  DecodeResult best;
  double best_score = -1.0;
  for (std::size_t i = 0; i < config.num_samples; ++i) {
    DecodeResult r = decode_sampling(condition, gen, config, rng);
    const double s = disc.score(PrefixView{condition.token_ids(), r.sequence.token_ids()});
    if (i == 0 || s > best_score || (s == best_score && r.gen_logprob > best.gen_logprob)) {
      best_score = s;
      best = std::move(r);
    }
  }
  return best;
}

}  // namespace selfgan
