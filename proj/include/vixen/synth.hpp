#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vixen/image.hpp"

namespace vixen {

// A generated before/after pair with its captions. Shapes are axis-aligned
// squares on a grey background, one per quadrant at most, so they line up
// with any patch size dividing half the image.
struct SyntheticPair {
  std::string id;
  Image source;
  Image edited;
  std::string caption_source;
  std::string caption_edited;
  std::string instruction;
  std::string summary;
};

/// `n` pairs with distinct summaries (recolour, remove, add, move edits),
/// `size` x `size` pixels, `size` divisible by 4. Deterministic in `seed`.
std::vector<SyntheticPair> synthesize_pairs(std::size_t n, std::size_t size, std::uint64_t seed);

}  // namespace vixen
