#pragma once

// Vocabulary, sequences, distributions, datasets and seeded randomness.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace selfgan {

using TokenId = std::int32_t;

// ============================================================================
// Errors
// ============================================================================

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SELFGAN_DEFINE_ERROR(Name) \
  class Name : public Error {      \
   public:                         \
    using Error::Error;            \
  }

SELFGAN_DEFINE_ERROR(UnknownToken);
SELFGAN_DEFINE_ERROR(DegenerateDistribution);
SELFGAN_DEFINE_ERROR(InvariantViolation);
SELFGAN_DEFINE_ERROR(InvalidSpec);
SELFGAN_DEFINE_ERROR(IoError);

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// ============================================================================
// Formatting helpers
// ============================================================================

/// Shortest round-trip decimal text for a double ("nan"/"inf" for non-finite).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw Error("not a number: '" + std::string(text) + "'");
  return v;
}

// ============================================================================
// Vocabulary
// ============================================================================

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kBosToken = "<bos>";

class Vocabulary {
 public:
  Vocabulary() = default;

  /// `tokens` must start with pad, eos, bos (in that order).
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 4)
      throw InvariantViolation("vocabulary needs specials plus at least one content token");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) throw InvariantViolation("empty token string");
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
        throw InvariantViolation("duplicate token '" + tokens_[i] + "'");
      max_token_len_ = std::max(max_token_len_, tokens_[i].size());
    }
  }

  /// Specials followed by one single-character token per content symbol.
  static Vocabulary from_symbols(std::string_view symbols) {
    std::vector<std::string> tokens{std::string(kPadToken), std::string(kEosToken),
                                    std::string(kBosToken)};
    for (char c : symbols) tokens.emplace_back(1, c);
    return Vocabulary(std::move(tokens));
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId pad_id() const noexcept { return 0; }
  TokenId eos_id() const noexcept { return 1; }
  TokenId bos_id() const noexcept { return 2; }
  bool valid(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
  }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::optional<TokenId> find(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::size_t max_token_len_ = 0;

  friend std::vector<TokenId> encode(std::string_view, const Vocabulary&);
};

/// Greedy longest-match tokenization, so multi-character specials such as
/// "<eos>" can appear inside otherwise character-level text.
inline std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    bool matched = false;
    for (std::size_t len = std::min(vocab.max_token_len_, text.size() - pos); len >= 1; --len) {
      auto it = vocab.index_.find(std::string(text.substr(pos, len)));
      if (it != vocab.index_.end()) {
        ids.push_back(it->second);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched)
      throw UnknownToken("symbol '" + std::string(1, text[pos]) + "' at offset " +
                         std::to_string(pos) + " not in vocabulary");
  }
  return ids;
}

inline std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) out += vocab.token(id);
  return out;
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  if (tokens.size() < 3 || tokens[0] != kPadToken || tokens[1] != kEosToken ||
      tokens[2] != kBosToken)
    throw InvariantViolation("vocabulary file must start with <pad>, <eos>, <bos>");
  return Vocabulary(std::move(tokens));
}

inline void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

// ============================================================================
// Sequences and conditions
// ============================================================================

/// Generator output: no pad, eos at most once and only last.
class Sequence {
 public:
  Sequence() = default;
  explicit Sequence(std::vector<TokenId> ids, TokenId eos_id = 1, TokenId pad_id = 0)
      : ids_(std::move(ids)) {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i] == pad_id) throw InvariantViolation("sequence contains pad");
      if (ids_[i] == eos_id && i + 1 != ids_.size())
        throw InvariantViolation("eos may only appear as the last token");
    }
    terminated_ = !ids_.empty() && ids_.back() == eos_id;
  }

  const std::vector<TokenId>& token_ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool terminated() const noexcept { return terminated_; }
  bool empty() const noexcept { return ids_.empty(); }

  /// Tokens without the trailing eos.
  std::span<const TokenId> content() const noexcept {
    return {ids_.data(), ids_.size() - (terminated_ ? 1 : 0)};
  }

  bool operator==(const Sequence&) const = default;

 private:
  std::vector<TokenId> ids_;
  bool terminated_ = false;
};

class Condition {
 public:
  Condition() = default;
  explicit Condition(std::vector<TokenId> ids, TokenId eos_id = 1, TokenId pad_id = 0)
      : ids_(std::move(ids)) {
    if (ids_.empty()) throw InvariantViolation("condition must be non-empty");
    for (TokenId t : ids_)
      if (t == eos_id || t == pad_id) throw InvariantViolation("condition contains eos/pad");
  }
  const std::vector<TokenId>& token_ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool operator==(const Condition&) const = default;
  auto operator<=>(const Condition& o) const { return ids_ <=> o.ids_; }

 private:
  std::vector<TokenId> ids_;
};

struct ExamplePair {
  Condition condition;
  Sequence reference;

  ExamplePair() = default;
  ExamplePair(Condition c, Sequence r) : condition(std::move(c)), reference(std::move(r)) {
    if (!reference.terminated()) throw InvariantViolation("reference must end with eos");
  }
  bool operator==(const ExamplePair&) const = default;
};

// ============================================================================
// TokenDistribution
// ============================================================================

class TokenDistribution {
 public:
  static constexpr double kTolerance = 1e-6;

  TokenDistribution() = default;
  explicit TokenDistribution(std::vector<double> probs, TokenId pad_id = 0)
      : probs_(std::move(probs)) {
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p))
        throw InvariantViolation("distribution has negative or non-finite mass");
      sum += p;
    }
    if (pad_id >= 0 && static_cast<std::size_t>(pad_id) < probs_.size() &&
        probs_[static_cast<std::size_t>(pad_id)] != 0.0)
      throw InvariantViolation("pad must carry zero probability");
    if (std::abs(sum - 1.0) > kTolerance)
      throw InvariantViolation("distribution sums to " + format_double(sum));
  }

  /// Normalizes raw non-negative weights; pad weight is forced to zero.
  static TokenDistribution from_weights(std::vector<double> w, TokenId pad_id = 0) {
    if (pad_id >= 0 && static_cast<std::size_t>(pad_id) < w.size())
      w[static_cast<std::size_t>(pad_id)] = 0.0;
    double sum = 0.0;
    for (double x : w) sum += x;
    if (!(sum > 0.0) || !std::isfinite(sum))
      throw DegenerateDistribution("no probability mass outside pad");
    for (double& x : w) x /= sum;
    return TokenDistribution(std::move(w), pad_id);
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](TokenId id) const { return probs_[static_cast<std::size_t>(id)]; }
  const std::vector<double>& probs() const noexcept { return probs_; }

  /// Highest-probability token; ties go to the lowest index.
  TokenId argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs_.size(); ++i)
      if (probs_[i] > probs_[best]) best = i;
    return static_cast<TokenId>(best);
  }

 private:
  std::vector<double> probs_;
};

// ============================================================================
// RandomSource
// ============================================================================

/// Seeded 64-bit generator. All uniform draws are derived from raw engine
/// output so results do not depend on the standard library's distributions.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw Error("below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do x = engine_(); while (x >= limit);
    return x % n;
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  /// Independent stream keyed by (seed, key); does not advance this source.
  RandomSource derive(std::uint64_t key) const {
    return RandomSource(splitmix64(seed_ ^ splitmix64(key + 0x632be59bd9b4e019ULL)));
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Inverse-CDF draw. Only indices with positive mass are ever returned.
inline TokenId sample_categorical(const TokenDistribution& dist, RandomSource& rng,
                                  TokenId pad_id = 0) {
  const auto& p = dist.probs();
  double total = 0.0;
  TokenId last_positive = -1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (static_cast<TokenId>(i) == pad_id) continue;
    total += p[i];
    if (p[i] > 0.0) last_positive = static_cast<TokenId>(i);
  }
  if (last_positive < 0 || !(total > 0.0))
    throw DegenerateDistribution("all mass on pad");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (static_cast<TokenId>(i) == pad_id || p[i] <= 0.0) continue;
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  return last_positive;
}

// ============================================================================
// Datasets (JSON Lines: {"condition": "...", "reference": "..."})
// ============================================================================

inline ExamplePair make_pair(std::string_view condition, std::string_view reference,
                             const Vocabulary& vocab) {
  return ExamplePair(Condition(encode(condition, vocab), vocab.eos_id(), vocab.pad_id()),
                     Sequence(encode(reference, vocab), vocab.eos_id(), vocab.pad_id()));
}

inline std::vector<ExamplePair> load_dataset(const std::filesystem::path& path,
                                             const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<ExamplePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, e.what());
    }
    if (!j.is_object() || !j.contains("condition") || !j.contains("reference") ||
        !j["condition"].is_string() || !j["reference"].is_string())
      throw ParseError(line_no, "expected string fields 'condition' and 'reference'");
    try {
      out.push_back(make_pair(j["condition"].get<std::string>(),
                              j["reference"].get<std::string>(), vocab));
    } catch (const InvariantViolation& e) {
      throw InvariantViolation("record " + std::to_string(out.size()) + ": " + e.what());
    } catch (const UnknownToken& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

inline std::string dataset_line(const ExamplePair& ex, const Vocabulary& vocab) {
  nlohmann::ordered_json j;
  j["condition"] = decode(ex.condition.token_ids(), vocab);
  j["reference"] = decode(ex.reference.token_ids(), vocab);
  return j.dump();
}

inline void save_dataset(std::span<const ExamplePair> data, const Vocabulary& vocab,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  for (const auto& ex : data) out << dataset_line(ex, vocab) << '\n';
}

}  // namespace selfgan
