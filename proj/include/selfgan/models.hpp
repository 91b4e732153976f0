#pragma once

// Generator (policy) and sequential discriminator (value) with explicit
// backward passes.
//
// Both models read the condition through a relative-position attention: the
// weight of condition position i when producing/scoring output position j is
// softmax_i(fwd[i - j] + bwd[(L - 1 - i) - j]), with both tables learned.
// That is enough to express copy- and reverse-style alignments without a
// transformer, and it keeps finite-difference checks cheap.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "selfgan/core.hpp"
#include "selfgan/parameters.hpp"

namespace selfgan {

SELFGAN_DEFINE_ERROR(PrefixTerminated);

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kEosId = 1;
inline constexpr TokenId kBosId = 2;

/// Condition plus partial output; the unit both models consume.
struct PrefixView {
  std::span<const TokenId> condition;
  std::span<const TokenId> prefix;

  bool complete() const noexcept { return !prefix.empty() && prefix.back() == kEosId; }
};

struct PrefixState {
  Condition condition;
  std::vector<TokenId> prefix;

  PrefixView view() const noexcept { return {condition.token_ids(), prefix}; }
  operator PrefixView() const noexcept { return view(); }
};

struct ModelArch {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 48;
  std::size_t context_window = 2;  // previous output tokens fed to the generator
  std::size_t max_offset = 32;     // relative offsets are clamped to [-max_offset, max_offset]

  void validate() const {
    if (vocab_size < 4) throw InvariantViolation("vocab_size must be >= 4");
    if (embed_dim == 0 || hidden_dim == 0 || max_offset == 0)
      throw InvariantViolation("model dimensions must be positive");
  }
  bool operator==(const ModelArch&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelArch& a) {
  j = nlohmann::json{{"vocab_size", a.vocab_size},
                     {"embed_dim", a.embed_dim},
                     {"hidden_dim", a.hidden_dim},
                     {"context_window", a.context_window},
                     {"max_offset", a.max_offset}};
}

inline void from_json(const nlohmann::json& j, ModelArch& a) {
  a.vocab_size = j.at("vocab_size").get<std::size_t>();
  a.embed_dim = j.value("embed_dim", a.embed_dim);
  a.hidden_dim = j.value("hidden_dim", a.hidden_dim);
  a.context_window = j.value("context_window", a.context_window);
  a.max_offset = j.value("max_offset", a.max_offset);
}

namespace detail {

inline std::size_t offset_index(long off, std::size_t max_offset) {
  const long r = static_cast<long>(max_offset);
  return static_cast<std::size_t>(std::clamp(off, -r, r) + r);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// y += M x for a row-major rows x cols matrix.
inline void gemv_add(std::span<const double> m, std::size_t rows, std::size_t cols,
                     const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] += s;
  }
}

/// Relative-position attention over the condition for output position `pos`.
/// Fills weights, the blended embedding and the two table indices per input.
struct Attention {
  std::vector<double> weights;
  std::vector<std::size_t> fwd_idx, bwd_idx;
  std::vector<double> context;
};

inline void attend(std::span<const TokenId> cond, std::size_t pos, std::span<const double> fwd,
                   std::span<const double> bwd, std::span<const double> emb, std::size_t dim,
                   std::size_t max_offset, Attention& out) {
  const std::size_t n = cond.size();
  out.weights.resize(n);
  out.fwd_idx.resize(n);
  out.bwd_idx.resize(n);
  out.context.assign(dim, 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const long p = static_cast<long>(pos);
    out.fwd_idx[i] = offset_index(static_cast<long>(i) - p, max_offset);
    out.bwd_idx[i] = offset_index(static_cast<long>(n - 1 - i) - p, max_offset);
    out.weights[i] = fwd[out.fwd_idx[i]] + bwd[out.bwd_idx[i]];
    mx = std::max(mx, out.weights[i]);
  }
  double sum = 0.0;
  for (double& w : out.weights) {
    w = std::exp(w - mx);
    sum += w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.weights[i] /= sum;
    const double* e = emb.data() + static_cast<std::size_t>(cond[i]) * dim;
    for (std::size_t k = 0; k < dim; ++k) out.context[k] += out.weights[i] * e[k];
  }
}

/// Backward of `attend` given dL/dcontext.
inline void attend_backward(std::span<const TokenId> cond, const Attention& att,
                            const double* dcontext, std::span<const double> emb, std::size_t dim,
                            double* dfwd, double* dbwd, double* demb) {
  const std::size_t n = cond.size();
  double mean_g = 0.0;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row = static_cast<std::size_t>(cond[i]) * dim;
    const double* e = emb.data() + row;
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      s += dcontext[k] * e[k];
      demb[row + k] += att.weights[i] * dcontext[k];
    }
    g[i] = s;
    mean_g += att.weights[i] * s;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double ds = att.weights[i] * (g[i] - mean_g);
    dfwd[att.fwd_idx[i]] += ds;
    dbwd[att.bwd_idx[i]] += ds;
  }
}

inline void fill_uniform(std::span<double> v, RandomSource& rng, double scale) {
  for (double& x : v) x = rng.uniform(-scale, scale);
}

}  // namespace detail

// ============================================================================
// GeneratorModel
// ============================================================================

/// Next-token policy over the vocabulary. Pad always receives zero mass.
class GeneratorModel {
 public:
  GeneratorModel() = default;
  explicit GeneratorModel(ModelArch arch) : arch_(arch) {
    arch_.validate();
    const std::size_t v = arch_.vocab_size, d = arch_.embed_dim, h = arch_.hidden_dim;
    const std::size_t offsets = 2 * arch_.max_offset + 1;
    cond_emb_ = params_.add_block("cond_embedding", v, d);
    attn_fwd_ = params_.add_block("attn_fwd", 1, offsets);
    attn_bwd_ = params_.add_block("attn_bwd", 1, offsets);
    remaining_emb_ = params_.add_block("remaining_embedding", offsets, d);
    position_emb_ = params_.add_block("position_embedding", arch_.max_offset + 1, d);
    prev_emb_ = params_.add_block("prev_embedding", arch_.context_window * v, d);
    hidden_w_ = params_.add_block("hidden_w", h, feature_dim());
    hidden_b_ = params_.add_block("hidden_b", 1, h);
    out_w_ = params_.add_block("out_w", v, h);
    out_b_ = params_.add_block("out_b", 1, v);
  }

  /// Embeddings uniform(-0.05, 0.05); hidden layer Glorot-uniform; output
  /// layer zero, so an initialized model is uniform over non-pad tokens.
  void initialize(RandomSource& rng) {
    std::fill(params_.values().begin(), params_.values().end(), 0.0);
    for (const Block* b : {&cond_emb_, &remaining_emb_, &position_emb_, &prev_emb_})
      detail::fill_uniform(params_.block(*b), rng, 0.05);
    detail::fill_uniform(params_.block(hidden_w_), rng,
                         std::sqrt(6.0 / static_cast<double>(feature_dim() + arch_.hidden_dim)));
  }

  const ModelArch& arch() const noexcept { return arch_; }
  std::size_t vocab_size() const noexcept { return arch_.vocab_size; }
  ParameterVector& parameters() noexcept { return params_; }
  const ParameterVector& parameters() const noexcept { return params_; }
  std::size_t feature_dim() const noexcept { return (3 + arch_.context_window) * arch_.embed_dim; }

  TokenDistribution next_token_distribution(PrefixView s) const {
    Forward f;
    forward(s, f);
    return TokenDistribution(std::move(f.probs), kPadId);
  }

  /// Adds weight * d(-log p(seq | cond))/d(theta) into `grad`; returns the
  /// unweighted negative log-likelihood summed over tokens.
  double accumulate_nll(std::span<const TokenId> cond, std::span<const TokenId> seq,
                        double weight, std::span<double> grad) const {
    Forward f;
    double nll = 0.0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const PrefixView s{cond, seq.first(t)};
      forward(s, f);
      const double p = f.probs[static_cast<std::size_t>(seq[t])];
      nll -= std::log(p);
      if (weight != 0.0) backward(s, f, seq[t], weight, grad);
    }
    return nll;
  }

  double sequence_nll(std::span<const TokenId> cond, std::span<const TokenId> seq) const {
    return accumulate_nll(cond, seq, 0.0, {});
  }

  /// Gradient of the sequence NLL in a fresh buffer; parameters and the
  /// training gradient buffer are untouched.
  std::vector<double> nll_gradient(std::span<const TokenId> cond, std::span<const TokenId> seq) const {
    std::vector<double> g(params_.size(), 0.0);
    accumulate_nll(cond, seq, 1.0, g);
    return g;
  }

 private:
  struct Forward {
    detail::Attention att;
    std::size_t remaining_row = 0, position_row = 0;
    std::vector<std::size_t> prev_rows;
    std::vector<double> features, hidden, probs;
  };

  void forward(PrefixView s, Forward& f) const {
    if (s.complete()) throw PrefixTerminated("prefix already ends with eos");
    const std::size_t d = arch_.embed_dim, h = arch_.hidden_dim, v = arch_.vocab_size;
    const std::size_t t = s.prefix.size();
    const long len = static_cast<long>(s.condition.size());

    detail::attend(s.condition, t, params_.block(attn_fwd_), params_.block(attn_bwd_),
                   params_.block(cond_emb_), d, arch_.max_offset, f.att);
    f.remaining_row = detail::offset_index(len - static_cast<long>(t), arch_.max_offset);
    f.position_row = std::min(t, arch_.max_offset);
    f.prev_rows.resize(arch_.context_window);
    for (std::size_t w = 0; w < arch_.context_window; ++w) {
      const TokenId tok = t > w ? s.prefix[t - 1 - w] : kBosId;
      f.prev_rows[w] = w * v + static_cast<std::size_t>(tok);
    }

    f.features.resize(feature_dim());
    auto put = [&](std::size_t slot, const double* src) {
      std::copy(src, src + d, f.features.begin() + static_cast<std::ptrdiff_t>(slot * d));
    };
    put(0, f.att.context.data());
    put(1, params_.block(remaining_emb_).data() + f.remaining_row * d);
    put(2, params_.block(position_emb_).data() + f.position_row * d);
    for (std::size_t w = 0; w < arch_.context_window; ++w)
      put(3 + w, params_.block(prev_emb_).data() + f.prev_rows[w] * d);

    auto hb = params_.block(hidden_b_);
    f.hidden.assign(hb.begin(), hb.end());
    detail::gemv_add(params_.block(hidden_w_), h, feature_dim(), f.features.data(),
                     f.hidden.data());
    for (double& x : f.hidden) x = std::tanh(x);

    auto ob = params_.block(out_b_);
    f.probs.assign(ob.begin(), ob.end());
    detail::gemv_add(params_.block(out_w_), v, h, f.hidden.data(), f.probs.data());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v; ++i)
      if (i != static_cast<std::size_t>(kPadId)) mx = std::max(mx, f.probs[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
      f.probs[i] = i == static_cast<std::size_t>(kPadId) ? 0.0 : std::exp(f.probs[i] - mx);
      sum += f.probs[i];
    }
    for (double& p : f.probs) p /= sum;
  }

  void backward(PrefixView s, const Forward& f, TokenId target, double weight,
                std::span<double> grad) const {
    const std::size_t d = arch_.embed_dim, h = arch_.hidden_dim, v = arch_.vocab_size;
    const std::size_t fd = feature_dim();
    double* g = grad.data();

    std::vector<double> dlogits(v);
    for (std::size_t i = 0; i < v; ++i) dlogits[i] = weight * f.probs[i];
    dlogits[static_cast<std::size_t>(target)] -= weight;
    dlogits[static_cast<std::size_t>(kPadId)] = 0.0;

    auto ow = params_.block(out_w_);
    std::vector<double> dhidden(h, 0.0);
    for (std::size_t i = 0; i < v; ++i) {
      if (dlogits[i] == 0.0) continue;
      g[out_b_.offset + i] += dlogits[i];
      double* gw = g + out_w_.offset + i * h;
      const double* w = ow.data() + i * h;
      for (std::size_t k = 0; k < h; ++k) {
        gw[k] += dlogits[i] * f.hidden[k];
        dhidden[k] += dlogits[i] * w[k];
      }
    }

    auto hw = params_.block(hidden_w_);
    std::vector<double> dfeat(fd, 0.0);
    for (std::size_t k = 0; k < h; ++k) {
      const double dpre = dhidden[k] * (1.0 - f.hidden[k] * f.hidden[k]);
      if (dpre == 0.0) continue;
      g[hidden_b_.offset + k] += dpre;
      double* gw = g + hidden_w_.offset + k * fd;
      const double* w = hw.data() + k * fd;
      for (std::size_t c = 0; c < fd; ++c) {
        gw[c] += dpre * f.features[c];
        dfeat[c] += dpre * w[c];
      }
    }

    auto add_row = [&](const Block& b, std::size_t row, const double* src) {
      double* dst = g + b.offset + row * d;
      for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
    };
    add_row(remaining_emb_, f.remaining_row, dfeat.data() + d);
    add_row(position_emb_, f.position_row, dfeat.data() + 2 * d);
    for (std::size_t w = 0; w < arch_.context_window; ++w)
      add_row(prev_emb_, f.prev_rows[w], dfeat.data() + (3 + w) * d);

    detail::attend_backward(s.condition, f.att, dfeat.data(), params_.block(cond_emb_), d,
                            g + attn_fwd_.offset, g + attn_bwd_.offset, g + cond_emb_.offset);
  }

  ModelArch arch_;
  ParameterVector params_;
  Block cond_emb_, attn_fwd_, attn_bwd_, remaining_emb_, position_emb_, prev_emb_;
  Block hidden_w_, hidden_b_, out_w_, out_b_;
};

// ============================================================================
// DiscriminatorModel
// ============================================================================

/// Probability that a (possibly unfinished) output is a human reference.
///
/// Each output position j gets a feature vector built from the attended
/// condition embedding c_j, its token embedding e_j, the match c_j * e_j and
/// an embedding of L - j. A tanh layer maps it to u_j; the prefix of length t
/// is summarized by mean(u_0..u_{t-1}) and read out with a linear head plus a
/// bias indexed by L - t. Because u_j does not depend on t, scores for all
/// prefix lengths of a sequence come out of one pass.
class DiscriminatorModel {
 public:
  static constexpr double kScoreEpsilon = 1e-12;

  DiscriminatorModel() = default;
  explicit DiscriminatorModel(ModelArch arch) : arch_(arch) {
    arch_.validate();
    const std::size_t v = arch_.vocab_size, d = arch_.embed_dim, h = arch_.hidden_dim;
    const std::size_t offsets = 2 * arch_.max_offset + 1;
    cond_emb_ = params_.add_block("cond_embedding", v, d);
    tok_emb_ = params_.add_block("token_embedding", v, d);
    attn_fwd_ = params_.add_block("attn_fwd", 1, offsets);
    attn_bwd_ = params_.add_block("attn_bwd", 1, offsets);
    remaining_emb_ = params_.add_block("remaining_embedding", offsets, d);
    hidden_w_ = params_.add_block("hidden_w", h, feature_dim());
    hidden_b_ = params_.add_block("hidden_b", 1, h);
    out_w_ = params_.add_block("out_w", 1, h);
    length_bias_ = params_.add_block("length_bias", 1, offsets);
    out_b_ = params_.add_block("out_b", 1, 1);
  }

  /// Same scheme as the generator: zero readout, so every score starts at 0.5.
  void initialize(RandomSource& rng) {
    std::fill(params_.values().begin(), params_.values().end(), 0.0);
    for (const Block* b : {&cond_emb_, &tok_emb_, &remaining_emb_})
      detail::fill_uniform(params_.block(*b), rng, 0.05);
    detail::fill_uniform(params_.block(hidden_w_), rng,
                         std::sqrt(6.0 / static_cast<double>(feature_dim() + arch_.hidden_dim)));
  }

  const ModelArch& arch() const noexcept { return arch_; }
  ParameterVector& parameters() noexcept { return params_; }
  const ParameterVector& parameters() const noexcept { return params_; }
  std::size_t feature_dim() const noexcept { return 4 * arch_.embed_dim; }

  double logit(PrefixView s) const {
    Pass p;
    run(s.condition, s.prefix, p, false);
    return p.logits.back();
  }

  /// Score in (0, 1), clamped away from the endpoints.
  double score(PrefixView s) const { return clamp_score(detail::sigmoid(logit(s))); }

  /// log(score), computed from the logit for precision.
  double log_score(PrefixView s) const {
    return std::max(-detail::softplus(-logit(s)), std::log(kScoreEpsilon));
  }

  /// Logits for every prefix length 0..|tokens| of one output.
  std::vector<double> prefix_logits(std::span<const TokenId> cond,
                                    std::span<const TokenId> tokens) const {
    Pass p;
    run(cond, tokens, p, true);
    return p.logits;
  }

  /// Left-to-right binary cross-entropy: mean over prefix lengths 1..T of
  /// BCE(D(prefix), label). Adds weight * gradient into `grad`; returns the
  /// unweighted mean loss.
  double accumulate_bce(std::span<const TokenId> cond, std::span<const TokenId> tokens,
                        double label, double weight, std::span<double> grad) const {
    if (tokens.empty()) throw InvariantViolation("cannot score an empty output for training");
    Pass p;
    run(cond, tokens, p, true);
    const std::size_t T = tokens.size(), d = arch_.embed_dim, h = arch_.hidden_dim;
    const std::size_t fd = feature_dim();
    const long len = static_cast<long>(cond.size());
    double loss = 0.0;
    std::vector<double> dlogit(T + 1, 0.0);
    for (std::size_t k = 1; k <= T; ++k) {
      const double l = p.logits[k];
      loss += detail::softplus(l) - label * l;
      dlogit[k] = weight * (detail::sigmoid(l) - label) / static_cast<double>(T);
    }
    loss /= static_cast<double>(T);
    if (weight == 0.0) return loss;

    double* g = grad.data();
    auto ow = params_.block(out_w_);
    // pooled_k = (1/k) sum_{j<k} u_j, so du_j = w_out * sum_{k>j} dlogit_k / k.
    std::vector<double> suffix(T + 1, 0.0);
    for (std::size_t k = T; k >= 1; --k) {
      suffix[k - 1] = suffix[k] + dlogit[k] / static_cast<double>(k);
      g[out_b_.offset] += dlogit[k];
      g[length_bias_.offset + detail::offset_index(len - static_cast<long>(k), arch_.max_offset)] +=
          dlogit[k];
      const double* pooled = p.pooled.data() + k * h;
      for (std::size_t c = 0; c < h; ++c) g[out_w_.offset + c] += dlogit[k] * pooled[c];
    }

    auto hw = params_.block(hidden_w_);
    std::vector<double> dfeat(fd);
    for (std::size_t j = 0; j < T; ++j) {
      std::fill(dfeat.begin(), dfeat.end(), 0.0);
      const double* u = p.units.data() + j * h;
      const double* feat = p.features.data() + j * fd;
      for (std::size_t c = 0; c < h; ++c) {
        const double dpre = suffix[j] * ow[c] * (1.0 - u[c] * u[c]);
        if (dpre == 0.0) continue;
        g[hidden_b_.offset + c] += dpre;
        double* gw = g + hidden_w_.offset + c * fd;
        const double* w = hw.data() + c * fd;
        for (std::size_t q = 0; q < fd; ++q) {
          gw[q] += dpre * feat[q];
          dfeat[q] += dpre * w[q];
        }
      }
      // features = [c, e, c*e, r]
      const double* ctx = feat;
      const double* emb = feat + d;
      std::vector<double> dctx(d), demb(d);
      for (std::size_t k = 0; k < d; ++k) {
        dctx[k] = dfeat[k] + dfeat[2 * d + k] * emb[k];
        demb[k] = dfeat[d + k] + dfeat[2 * d + k] * ctx[k];
      }
      double* gt = g + tok_emb_.offset + static_cast<std::size_t>(tokens[j]) * d;
      double* gr = g + remaining_emb_.offset + p.remaining_rows[j] * d;
      for (std::size_t k = 0; k < d; ++k) {
        gt[k] += demb[k];
        gr[k] += dfeat[3 * d + k];
      }
      detail::attend_backward(cond, p.attention[j], dctx.data(), params_.block(cond_emb_), d,
                              g + attn_fwd_.offset, g + attn_bwd_.offset, g + cond_emb_.offset);
    }
    return loss;
  }

  static double clamp_score(double s) {
    return std::clamp(s, kScoreEpsilon, 1.0 - kScoreEpsilon);
  }

 private:
  struct Pass {
    std::vector<detail::Attention> attention;
    std::vector<std::size_t> remaining_rows;
    std::vector<double> features;  // T x feature_dim
    std::vector<double> units;     // T x hidden
    std::vector<double> pooled;    // (T + 1) x hidden
    std::vector<double> logits;    // T + 1, or just the last one
  };

  void run(std::span<const TokenId> cond, std::span<const TokenId> tokens, Pass& p,
           bool all_prefixes) const {
    const std::size_t T = tokens.size(), d = arch_.embed_dim, h = arch_.hidden_dim;
    const std::size_t fd = feature_dim();
    const long len = static_cast<long>(cond.size());
    p.attention.resize(T);
    p.remaining_rows.resize(T);
    p.features.assign(T * fd, 0.0);
    p.units.assign(T * h, 0.0);
    p.pooled.assign((T + 1) * h, 0.0);
    auto tok = params_.block(tok_emb_);
    auto rem = params_.block(remaining_emb_);
    auto hb = params_.block(hidden_b_);
    for (std::size_t j = 0; j < T; ++j) {
      detail::attend(cond, j, params_.block(attn_fwd_), params_.block(attn_bwd_),
                     params_.block(cond_emb_), d, arch_.max_offset, p.attention[j]);
      p.remaining_rows[j] = detail::offset_index(len - static_cast<long>(j), arch_.max_offset);
      double* feat = p.features.data() + j * fd;
      const double* ctx = p.attention[j].context.data();
      const double* e = tok.data() + static_cast<std::size_t>(tokens[j]) * d;
      const double* r = rem.data() + p.remaining_rows[j] * d;
      for (std::size_t k = 0; k < d; ++k) {
        feat[k] = ctx[k];
        feat[d + k] = e[k];
        feat[2 * d + k] = ctx[k] * e[k];
        feat[3 * d + k] = r[k];
      }
      double* u = p.units.data() + j * h;
      std::copy(hb.begin(), hb.end(), u);
      detail::gemv_add(params_.block(hidden_w_), h, fd, feat, u);
      for (std::size_t c = 0; c < h; ++c) u[c] = std::tanh(u[c]);
    }
    // Running means of u.
    std::vector<double> sum(h, 0.0);
    for (std::size_t k = 1; k <= T; ++k) {
      const double* u = p.units.data() + (k - 1) * h;
      double* pooled = p.pooled.data() + k * h;
      for (std::size_t c = 0; c < h; ++c) {
        sum[c] += u[c];
        pooled[c] = sum[c] / static_cast<double>(k);
      }
    }
    auto readout = [&](std::size_t k) {
      const double* pooled = p.pooled.data() + k * h;
      double l = params_.block(out_b_)[0] +
                 params_.block(length_bias_)[detail::offset_index(len - static_cast<long>(k),
                                                                  arch_.max_offset)];
      auto ow = params_.block(out_w_);
      for (std::size_t c = 0; c < h; ++c) l += ow[c] * pooled[c];
      return l;
    };
    p.logits.clear();
    if (all_prefixes) {
      for (std::size_t k = 0; k <= T; ++k) p.logits.push_back(readout(k));
    } else {
      p.logits.push_back(readout(T));
    }
  }

  ModelArch arch_;
  ParameterVector params_;
  Block cond_emb_, tok_emb_, attn_fwd_, attn_bwd_, remaining_emb_;
  Block hidden_w_, hidden_b_, out_w_, length_bias_, out_b_;
};

// ============================================================================
// Free-function operations
// ============================================================================

inline TokenDistribution next_token_distribution(const GeneratorModel& gen, PrefixView s) {
  return gen.next_token_distribution(s);
}

inline double sequence_log_prob(const GeneratorModel& gen, const Condition& condition,
                                const Sequence& seq) {
  return -gen.sequence_nll(condition.token_ids(), seq.token_ids());
}

inline double discriminator_score(const DiscriminatorModel& disc, PrefixView s) {
  return disc.score(s);
}

/// One teacher-forced gradient-descent step on the mean per-token NLL of the
/// batch. Optional per-example weights scale each example's contribution.
/// Returns the loss before the step.
inline double train_generator_mle(GeneratorModel& gen, std::span<const ExamplePair> batch,
                                  double lr, std::span<const double> weights = {}) {
  auto& params = gen.parameters();
  params.zero_grad();
  std::size_t tokens = 0;
  for (const auto& ex : batch) {
    if (!ex.reference.terminated()) throw InvariantViolation("MLE target must end with eos");
    tokens += ex.reference.size();
  }
  if (tokens == 0) throw InvariantViolation("empty MLE batch");
  const double scale = 1.0 / static_cast<double>(tokens);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    loss += w * gen.accumulate_nll(batch[i].condition.token_ids(),
                                   batch[i].reference.token_ids(), w * scale, params.grads());
  }
  loss *= scale;
  if (!std::isfinite(loss)) throw NonFiniteLoss("generator loss is not finite");
  params.mark_backward();
  params.sgd_step(lr);
  return loss;
}

/// Balanced binary cross-entropy over human and machine examples,
///   -( mean_H log D + mean_G log(1 - D) ) / 2,
/// with every prefix length of every example contributing one term.
/// Returns the loss before the step.
inline double train_discriminator(DiscriminatorModel& disc, std::span<const ExamplePair> human,
                                  std::span<const ExamplePair> machine, double lr) {
  if (human.empty() || machine.empty())
    throw InvariantViolation("discriminator step needs human and machine examples");
  auto& params = disc.parameters();
  params.zero_grad();
  double loss = 0.0;
  auto side = [&](std::span<const ExamplePair> xs, double label) {
    const double w = 0.5 / static_cast<double>(xs.size());
    for (const auto& ex : xs)
      loss += w * disc.accumulate_bce(ex.condition.token_ids(), ex.reference.token_ids(), label,
                                      w, params.grads());
  };
  side(human, 1.0);
  side(machine, 0.0);
  if (!std::isfinite(loss)) throw NonFiniteLoss("discriminator loss is not finite");
  params.mark_backward();
  params.sgd_step(lr);
  return loss;
}

template <class Model>
std::vector<double> gradient_snapshot(const Model& model) {
  const auto& p = model.parameters();
  if (!p.grads_fresh()) throw StaleGradient("gradients were zeroed since the last backward pass");
  return {p.grads().begin(), p.grads().end()};
}

// ============================================================================
// Checkpoints (JSON: kind, format version, architecture, flat values)
// ============================================================================

inline constexpr int kCheckpointVersion = 1;

template <class Model>
constexpr const char* checkpoint_kind() {
  if constexpr (std::is_same_v<Model, GeneratorModel>)
    return "generator";
  else
    return "discriminator";
}

template <class Model>
nlohmann::json checkpoint_json(const Model& model) {
  nlohmann::json j;
  j["format"] = "selfgan-checkpoint";
  j["version"] = kCheckpointVersion;
  j["kind"] = checkpoint_kind<Model>();
  j["arch"] = model.arch();
  const auto v = model.parameters().values();
  j["values"] = std::vector<double>(v.begin(), v.end());
  return j;
}

template <class Model>
Model model_from_checkpoint(const nlohmann::json& j) {
  if (j.value("format", "") != "selfgan-checkpoint")
    throw InvariantViolation("not a selfgan checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw InvariantViolation("unsupported checkpoint version");
  if (j.value("kind", "") != checkpoint_kind<Model>())
    throw InvariantViolation(std::string("checkpoint is not a ") + checkpoint_kind<Model>());
  Model m(j.at("arch").get<ModelArch>());
  m.parameters().assign(j.at("values").get<std::vector<double>>());
  return m;
}

template <class Model>
void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_json(model).dump() << '\n';
}

template <class Model>
Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvariantViolation("corrupt checkpoint " + path.string() + ": " + e.what());
  }
  return model_from_checkpoint<Model>(j);
}

}  // namespace selfgan
