#pragma once

#include "f3va/backbone/backbone.hpp"
#include "f3va/world/world.hpp"

namespace f3va::testing {

inline world::WorldConfig tiny_config() {
  world::WorldConfig c;
  c.pii_tokens_per_type = 8;
  c.lexicon_tokens_per_type = 1;
  c.pii_utterance_prob = 0.6;
  c.style_concentration = 10.0;
  return c;
}

struct TinyWorld {
  world::WorldParams params;
  world::Dataset ds;
};

inline TinyWorld tiny_world(std::uint64_t seed = 3, int speakers = 8, int utts = 6,
                            world::WorldConfig config = tiny_config()) {
  Rng rng(seed);
  Rng prng = rng.fork("params"), drng = rng.fork("data");
  TinyWorld w{world::make_world_params(config, prng), {}};
  w.ds = world::generate_world(w.params, speakers, utts, drng);
  return w;
}

/// An untrained backbone with a small trunk, enough for plumbing tests.
inline backbone::BackboneModel tiny_backbone(const TinyWorld& w, std::uint64_t seed = 5) {
  Rng rng(seed);
  Rng frng = rng.fork("frames");
  const auto frames = backbone::collect_frames(w.ds, w.params, frng);
  backbone::BackboneConfig c;
  c.hidden = 16;
  c.cond_hidden = 8;
  c.blocks = 1;
  c.codebook_size = 8;
  Rng irng = rng.fork("init");
  return backbone::init_backbone(w.params.D(), w.params.F(), frames.f_sem, c, irng);
}

}  // namespace f3va::testing
