#pragma once

// Cooperative Monte Carlo tree search decoding: the generator is the prior
// policy, the discriminator is the value function.
//
//   selection  argmax_w  Q(s,w) + c_puct * prior(w|s) * sqrt(sum_b N(s,b)) / (1 + N(s,w))
//   expansion  children = nucleus of the policy at pi_temperature, priors
//              renormalized; the node's value is D(state)
//   backup     Q <- max(Q, value), N <- N + 1 along the selected path
//   commit     root child with the most visits
//
// The root is expanded before the first simulation, so the children's visit
// counts sum to exactly num_simulations on a fresh root.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "selfgan/decoding.hpp"

namespace selfgan {

SELFGAN_DEFINE_ERROR(NotExpanded);
SELFGAN_DEFINE_ERROR(AlreadyExpanded);
SELFGAN_DEFINE_ERROR(NoChildren);

struct MctsConfig {
  double c_puct = 3.0;
  std::size_t num_simulations = 50;
  double expansion_top_p = 0.95;
  double pi_temperature = 1.0;
  bool reuse_subtree = true;
  std::size_t max_length = 32;

  void validate() const {
    if (!(c_puct >= 0.0)) throw InvariantViolation("c_puct must be non-negative");
    if (num_simulations < 1) throw InvariantViolation("num_simulations must be >= 1");
    if (!(expansion_top_p > 0.0 && expansion_top_p <= 1.0))
      throw InvariantViolation("expansion_top_p must be in (0, 1]");
    if (!(pi_temperature > 0.0)) throw InvariantViolation("pi_temperature must be positive");
    if (max_length < 1) throw InvariantViolation("max_length must be >= 1");
  }
};

struct SearchNode {
  TokenId token = kBosId;  // edge from the parent
  double prior = 1.0;
  std::size_t visit_count = 0;
  double value = 0.0;  // Q, max of backed-up values
  std::vector<std::unique_ptr<SearchNode>> children;
  bool expanded = false;
  bool terminal = false;
  std::optional<double> cached_value;  // D(state) computed at expansion

  SearchNode() = default;
  SearchNode(TokenId tok, double p, bool is_terminal)
      : token(tok), prior(p), terminal(is_terminal) {}

  std::size_t children_visits() const {
    std::size_t n = 0;
    for (const auto& c : children) n += c->visit_count;
    return n;
  }
};

/// PUCT argmax over the children of an expanded node; ties go to the higher
/// prior, then the lower token id.
inline SearchNode& puct_select(const SearchNode& parent, double c_puct) {
  if (!parent.expanded || parent.children.empty())
    throw NotExpanded("selection needs an expanded node with children");
  const double sqrt_total = std::sqrt(static_cast<double>(parent.children_visits()));
  SearchNode* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& child : parent.children) {
    const double u = c_puct * child->prior * sqrt_total / (1.0 + static_cast<double>(child->visit_count));
    const double score = child->value + u;
    if (best == nullptr || score > best_score ||
        (score == best_score && (child->prior > best->prior ||
                                 (child->prior == best->prior && child->token < best->token)))) {
      best = child.get();
      best_score = score;
    }
  }
  return *best;
}

/// Creates the children for the nucleus of the policy at `state` and records
/// D(state). A terminal node only gets its value. At length max_length - 1
/// the single child is a forced eos with prior 1.
template <PolicyModel P, ValueModel D>
double expand(SearchNode& node, PrefixView state, const P& gen, const D& disc,
              const MctsConfig& config) {
  if (node.expanded) throw AlreadyExpanded("node already expanded");
  const double v = disc.score(state);
  node.cached_value = v;
  node.expanded = true;
  if (node.terminal) return v;
  if (detail::forced_eos(state.prefix.size(), config.max_length)) {
    node.children.push_back(std::make_unique<SearchNode>(kEosId, 1.0, true));
    return v;
  }
  const auto filtered = filter_top_k_top_p(gen.next_token_distribution(state), std::nullopt,
                                           config.expansion_top_p, config.pi_temperature);
  for (std::size_t tok = 0; tok < filtered.size(); ++tok) {
    const TokenId id = static_cast<TokenId>(tok);
    if (filtered[id] > 0.0)
      node.children.push_back(
          std::make_unique<SearchNode>(id, filtered[id], id == kEosId));
  }
  return v;
}

inline void backup(std::span<SearchNode* const> path, double leaf_value) {
  for (SearchNode* n : path) {
    n->value = std::max(n->value, leaf_value);
    ++n->visit_count;
  }
}

/// Per-simulation and per-commit records for revision traces.
struct MctsTrace {
  struct Simulation {
    std::size_t step;
    std::size_t index;
    std::vector<TokenId> path;
    double leaf_value;
  };
  struct Commit {
    std::size_t step;
    TokenId token;
    std::size_t visits;
    double value;
  };
  std::vector<Simulation> simulations;
  std::vector<Commit> commits;

  /// One JSON object per line; simulations of a step precede its commit.
  std::string to_jsonl(const Vocabulary* vocab = nullptr) const {
    std::string out;
    std::size_t ci = 0;
    auto tok_json = [&](TokenId t) -> nlohmann::json {
      if (vocab) return vocab->token(t);
      return t;
    };
    auto flush_commits_through = [&](std::size_t step) {
      while (ci < commits.size() && commits[ci].step <= step) {
        nlohmann::ordered_json j;
        j["type"] = "commit";
        j["step"] = commits[ci].step;
        j["token"] = tok_json(commits[ci].token);
        j["visits"] = commits[ci].visits;
        j["value"] = commits[ci].value;
        out += j.dump() + "\n";
        ++ci;
      }
    };
    for (const auto& s : simulations) {
      if (s.step > 0) flush_commits_through(s.step - 1);
      nlohmann::ordered_json j;
      j["type"] = "simulation";
      j["step"] = s.step;
      j["simulation"] = s.index;
      nlohmann::json path = nlohmann::json::array();
      for (TokenId t : s.path) path.push_back(tok_json(t));
      j["path"] = path;
      j["leaf_value"] = s.leaf_value;
      out += j.dump() + "\n";
    }
    flush_commits_through(std::numeric_limits<std::size_t>::max());
    return out;
  }
};

/// Runs num_simulations simulations from `root` (which must correspond to
/// `state`) and returns the committed token. The root is expanded first if
/// needed. `rng` is accepted for interface uniformity; selection is
/// deterministic.
template <PolicyModel P, ValueModel D>
TokenId mcts_step(SearchNode& root, PrefixView state, const P& gen, const D& disc,
                  const MctsConfig& config, RandomSource& /*rng*/, MctsTrace* trace = nullptr,
                  std::size_t step_index = 0) {
  if (!root.expanded) expand(root, state, gen, disc, config);
  if (root.children.empty()) throw NoChildren("root has no children");

  std::vector<TokenId> prefix(state.prefix.begin(), state.prefix.end());
  std::vector<SearchNode*> path;
  for (std::size_t sim = 0; sim < config.num_simulations; ++sim) {
    path.assign(1, &root);
    prefix.resize(state.prefix.size());
    SearchNode* node = &root;
    while (node->expanded && !node->children.empty()) {
      node = &puct_select(*node, config.c_puct);
      path.push_back(node);
      prefix.push_back(node->token);
    }
    const PrefixView leaf{state.condition, prefix};
    const double v = node->expanded ? *node->cached_value : expand(*node, leaf, gen, disc, config);
    backup(path, v);
    if (trace) {
      trace->simulations.push_back(
          {step_index, sim, {prefix.begin() + static_cast<std::ptrdiff_t>(state.prefix.size()), prefix.end()}, v});
    }
  }

  const SearchNode* best = nullptr;
  for (const auto& c : root.children) {
    if (best == nullptr || c->visit_count > best->visit_count ||
        (c->visit_count == best->visit_count &&
         (c->value > best->value || (c->value == best->value && c->token < best->token))))
      best = c.get();
  }
  if (trace) trace->commits.push_back({step_index, best->token, best->visit_count, best->value});
  return best->token;
}

/// Token-by-token search until eos or max_length. With reuse_subtree the
/// committed child's subtree becomes the next root.
template <PolicyModel P, ValueModel D>
DecodeResult decode_coop_mcts(const Condition& condition, const P& gen, const D& disc,
                              const MctsConfig& config, RandomSource& rng,
                              MctsTrace* trace = nullptr) {
  config.validate();
  std::vector<TokenId> out;
  auto root = std::make_unique<SearchNode>();
  DecodeResult r;
  for (std::size_t step = 0; out.empty() || out.back() != kEosId; ++step) {
    const PrefixView state{condition.token_ids(), out};
    const TokenId tok = mcts_step(*root, state, gen, disc, config, rng, trace, step);
    const auto dist = gen.next_token_distribution(state);
    r.gen_logprob += std::log(dist[tok]);
    if (tok == kEosId && detail::forced_eos(out.size(), config.max_length) && dist.argmax() != kEosId)
      r.forced_termination = true;
    out.push_back(tok);
    if (tok == kEosId) break;
    std::unique_ptr<SearchNode> next;
    if (config.reuse_subtree) {
      for (auto& c : root->children)
        if (c->token == tok) next = std::move(c);
    }
    root = next ? std::move(next) : std::make_unique<SearchNode>();
  }
  r.sequence = detail::make_sequence(std::move(out));
  return r;
}

}  // namespace selfgan
