#pragma once

// Uniform entry point over every decoder:
// (condition, generator, optional discriminator, settings, rng) -> output.

#include <string>

#include "selfgan/decoding.hpp"
#include "selfgan/mcts.hpp"

namespace selfgan {

SELFGAN_DEFINE_ERROR(MissingDiscriminator);

enum class DecoderKind { greedy, sampling, beam, das_local, das_global, coop_mcts };

inline std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::greedy: return "greedy";
    case DecoderKind::sampling: return "sampling";
    case DecoderKind::beam: return "beam";
    case DecoderKind::das_local: return "das_local";
    case DecoderKind::das_global: return "das_global";
    case DecoderKind::coop_mcts: return "coop_mcts";
  }
  return "?";
}

inline DecoderKind decoder_kind_from_string(std::string_view s) {
  for (auto k : {DecoderKind::greedy, DecoderKind::sampling, DecoderKind::beam,
                 DecoderKind::das_local, DecoderKind::das_global, DecoderKind::coop_mcts})
    if (s == to_string(k)) return k;
  throw InvariantViolation("unknown decoder '" + std::string(s) + "'");
}

inline bool is_cooperative(DecoderKind k) {
  return k == DecoderKind::das_local || k == DecoderKind::das_global ||
         k == DecoderKind::coop_mcts;
}

struct DecoderSettings {
  DecodeConfig decode;
  MctsConfig mcts;

  /// The search uses decode.max_length so every decoder shares one limit.
  MctsConfig effective_mcts() const {
    MctsConfig m = mcts;
    m.max_length = decode.max_length;
    return m;
  }
  void validate() const {
    decode.validate();
    effective_mcts().validate();
  }
};

template <PolicyModel P, ValueModel D>
DecodeResult run_decoder(DecoderKind kind, const Condition& condition, const P& gen, const D* disc,
                         const DecoderSettings& settings, RandomSource& rng,
                         MctsTrace* trace = nullptr) {
  if (is_cooperative(kind) && disc == nullptr)
    throw MissingDiscriminator(to_string(kind) + " needs a discriminator");
  switch (kind) {
    case DecoderKind::greedy: return decode_greedy(condition, gen, settings.decode);
    case DecoderKind::sampling: return decode_sampling(condition, gen, settings.decode, rng);
    case DecoderKind::beam: return decode_beam(condition, gen, settings.decode);
    case DecoderKind::das_local: return decode_das_local(condition, gen, *disc, settings.decode);
    case DecoderKind::das_global:
      return decode_das_global(condition, gen, *disc, settings.decode, rng);
    case DecoderKind::coop_mcts:
      return decode_coop_mcts(condition, gen, *disc, settings.effective_mcts(), rng, trace);
  }
  throw InvariantViolation("unhandled decoder");
}

}  // namespace selfgan
