#pragma once

#include <filesystem>

#include <torch/torch.h>

#include "stegotag/common.hpp"

namespace stegotag {

/// Procedural stand-in imagery for runs without a local photo corpus.
///
/// Training wants a few hundred diverse covers; shipping one is out of scope
/// and downloads are a non-goal, so this generates a mix of smooth color
/// fields, fractal noise, stripes, checkers, cell patterns, speckle, rings,
/// and shape collages. Deterministic in (seed, index).

/// One texture, float32 (3, height, width) in [0, 1].
torch::Tensor synthesize_texture(RngStream& rng, int height, int width);

/// Write `count` PNG textures named synth_0000.png .. into `dir` (created if
/// needed). Sizes vary around 550-700 px so downstream resize/crop paths see
/// non-square inputs. Rewriting with the same seed is byte-identical.
void write_synthetic_corpus(const std::filesystem::path& dir, int count,
                            uint64_t seed);

}  // namespace stegotag
