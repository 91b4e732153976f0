#pragma once

// Synthetic conditional-generation tasks with an enumerable set of
// admissible outputs per condition.

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "selfgan/core.hpp"

namespace selfgan {

enum class TaskKind { copy, reverse, sort, templated_qa };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::sort: return "sort";
    case TaskKind::templated_qa: return "templated_qa";
  }
  return "?";
}

inline TaskKind task_kind_from_string(std::string_view s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "reverse") return TaskKind::reverse;
  if (s == "sort") return TaskKind::sort;
  if (s == "templated_qa") return TaskKind::templated_qa;
  throw InvalidSpec("unknown task '" + std::string(s) + "'");
}

struct TaskSpec {
  TaskKind name = TaskKind::reverse;
  std::size_t alphabet_size = 8;
  std::size_t min_condition_length = 4;
  std::size_t max_condition_length = 10;
  std::size_t num_train = 5000;
  std::size_t num_val = 500;
  std::size_t num_test = 500;
  double noise_rate = 0.3;

  void validate() const {
    if (alphabet_size < 1 || alphabet_size > 26)
      throw InvalidSpec("alphabet_size must be in [1, 26]");
    if (min_condition_length < 1 || min_condition_length > max_condition_length)
      throw InvalidSpec("condition length range must satisfy 1 <= min <= max");
    if (num_train == 0 || num_val == 0 || num_test == 0)
      throw InvalidSpec("split sizes must be positive");
    if (!(noise_rate >= 0.0 && noise_rate < 0.5))
      throw InvalidSpec("noise_rate must be in [0, 0.5)");
  }
};

// Template tokens for templated_qa: each slot has a canonical form and one
// synonym. References are  opener + reverse(condition) + closer + eos.
struct SynonymPair {
  char canonical;
  char synonym;
};
inline constexpr SynonymPair kOpener{'X', 'Y'};
inline constexpr SynonymPair kCloser{'U', 'V'};

/// Lowercase alphabet followed by the template symbols. Every task uses the
/// same layout so checkpoints stay interchangeable across tasks.
inline Vocabulary task_vocabulary(const TaskSpec& spec) {
  std::string symbols;
  for (std::size_t i = 0; i < spec.alphabet_size; ++i) symbols += static_cast<char>('a' + i);
  symbols += kOpener.canonical;
  symbols += kOpener.synonym;
  symbols += kCloser.canonical;
  symbols += kCloser.synonym;
  return Vocabulary::from_symbols(symbols);
}

namespace detail {

inline TokenId symbol_id(const Vocabulary& vocab, char c) {
  auto id = vocab.find(std::string(1, c));
  if (!id) throw InvalidSpec(std::string("vocabulary lacks template symbol ") + c);
  return *id;
}

/// Content tokens every admissible output shares, excluding templates and eos.
inline std::vector<TokenId> canonical_content(TaskKind kind, const Condition& c) {
  std::vector<TokenId> out = c.token_ids();
  switch (kind) {
    case TaskKind::copy: break;
    case TaskKind::reverse:
    case TaskKind::templated_qa: std::reverse(out.begin(), out.end()); break;
    case TaskKind::sort: std::sort(out.begin(), out.end()); break;
  }
  return out;
}

}  // namespace detail

/// Every admissible realization for `condition`; the first entry is canonical.
inline std::vector<Sequence> admissible_references(const TaskSpec& spec, const Vocabulary& vocab,
                                                   const Condition& condition) {
  auto content = detail::canonical_content(spec.name, condition);
  if (spec.name != TaskKind::templated_qa) {
    content.push_back(vocab.eos_id());
    return {Sequence(std::move(content), vocab.eos_id(), vocab.pad_id())};
  }
  std::vector<char> openers{kOpener.canonical}, closers{kCloser.canonical};
  if (spec.noise_rate > 0.0) {
    openers.push_back(kOpener.synonym);
    closers.push_back(kCloser.synonym);
  }
  std::vector<Sequence> out;
  for (char o : openers)
    for (char c : closers) {
      std::vector<TokenId> ids{detail::symbol_id(vocab, o)};
      ids.insert(ids.end(), content.begin(), content.end());
      ids.push_back(detail::symbol_id(vocab, c));
      ids.push_back(vocab.eos_id());
      out.emplace_back(std::move(ids), vocab.eos_id(), vocab.pad_id());
    }
  return out;
}

inline bool is_human_valid(const TaskSpec& spec, const Vocabulary& vocab,
                           const Condition& condition, const Sequence& candidate) {
  if (!candidate.terminated()) return false;
  for (const auto& ref : admissible_references(spec, vocab, condition))
    if (ref == candidate) return true;
  return false;
}

struct TaskSplits {
  std::vector<ExamplePair> train, val, test;
};

inline TaskSplits generate_task(const TaskSpec& spec, RandomSource& rng) {
  spec.validate();
  const Vocabulary vocab = task_vocabulary(spec);
  const std::size_t total = spec.num_train + spec.num_val + spec.num_test;

  // Enough distinct conditions must exist for the splits to be disjoint.
  long double capacity = 0;
  for (std::size_t len = spec.min_condition_length; len <= spec.max_condition_length; ++len)
    capacity += std::pow(static_cast<long double>(spec.alphabet_size), static_cast<long double>(len));
  if (capacity < static_cast<long double>(total))
    throw InvalidSpec("not enough distinct conditions for the requested split sizes");

  const TokenId first_letter = *vocab.find("a");
  const TokenId opener_syn = detail::symbol_id(vocab, kOpener.synonym);
  const TokenId closer_syn = detail::symbol_id(vocab, kCloser.synonym);
  const std::size_t span = spec.max_condition_length - spec.min_condition_length + 1;

  std::set<std::vector<TokenId>> seen;
  std::vector<ExamplePair> all;
  all.reserve(total);
  while (all.size() < total) {
    const std::size_t len = spec.min_condition_length + rng.below(span);
    std::vector<TokenId> ids(len);
    for (auto& t : ids) t = first_letter + static_cast<TokenId>(rng.below(spec.alphabet_size));
    if (!seen.insert(ids).second) continue;
    Condition cond(std::move(ids), vocab.eos_id(), vocab.pad_id());
    Sequence ref = admissible_references(spec, vocab, cond).front();
    if (spec.name == TaskKind::templated_qa && spec.noise_rate > 0.0) {
      auto tokens = ref.token_ids();
      if (rng.uniform() < spec.noise_rate) tokens.front() = opener_syn;
      if (rng.uniform() < spec.noise_rate) tokens[tokens.size() - 2] = closer_syn;
      ref = Sequence(std::move(tokens), vocab.eos_id(), vocab.pad_id());
    }
    all.emplace_back(std::move(cond), std::move(ref));
  }

  TaskSplits out;
  auto first = all.begin();
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(spec.num_train));
  first += static_cast<std::ptrdiff_t>(spec.num_train);
  out.val.assign(first, first + static_cast<std::ptrdiff_t>(spec.num_val));
  first += static_cast<std::ptrdiff_t>(spec.num_val);
  out.test.assign(first, all.end());
  return out;
}

}  // namespace selfgan
