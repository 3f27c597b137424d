#include "vixen/synth.hpp"

#include <array>
#include <cstdio>
#include <set>

#include "vixen/error.hpp"
#include "vixen/random.hpp"

namespace vixen {

namespace {

struct Colour {
  const char* name;
  double r, g, b;
};

constexpr std::array<Colour, 8> kColours = {{{"red", 0.9, 0.1, 0.1},
                                             {"green", 0.1, 0.8, 0.2},
                                             {"blue", 0.1, 0.2, 0.9},
                                             {"yellow", 0.95, 0.9, 0.1},
                                             {"white", 1.0, 1.0, 1.0},
                                             {"purple", 0.6, 0.1, 0.7},
                                             {"orange", 1.0, 0.55, 0.0},
                                             {"black", 0.0, 0.0, 0.0}}};

constexpr std::array<const char*, 4> kQuadrants = {"top left", "top right", "bottom left", "bottom right"};

Image background(std::size_t size) { return Image(size, size, 0.5); }

void draw_square(Image& img, std::size_t quadrant, const Colour& c) {
  const std::size_t half = img.height / 2;
  const std::size_t inset = half / 4;
  const std::size_t y0 = (quadrant / 2) * half + inset;
  const std::size_t x0 = (quadrant % 2) * half + inset;
  for (std::size_t y = y0; y < y0 + half - 2 * inset; ++y) {
    for (std::size_t x = x0; x < x0 + half - 2 * inset; ++x) {
      img.at(y, x, 0) = c.r;
      img.at(y, x, 1) = c.g;
      img.at(y, x, 2) = c.b;
    }
  }
}

std::string square_caption(const Colour& c, std::size_t q) {
  return std::string("A ") + c.name + " square in the " + kQuadrants[q] + " corner.";
}

SyntheticPair make_pair(std::size_t kind, std::size_t size, Rng& rng) {
  const std::size_t c1 = uniform_index(rng, kColours.size());
  std::size_t c2 = uniform_index(rng, kColours.size() - 1);
  if (c2 >= c1) ++c2;
  const std::size_t q1 = uniform_index(rng, kQuadrants.size());
  std::size_t q2 = uniform_index(rng, kQuadrants.size() - 1);
  if (q2 >= q1) ++q2;
  const Colour& a = kColours[c1];
  const Colour& b = kColours[c2];

  SyntheticPair p;
  p.source = background(size);
  p.edited = background(size);
  const std::string empty = "An empty grey background.";
  switch (kind) {
    case 0:
      draw_square(p.source, q1, a);
      draw_square(p.edited, q1, b);
      p.caption_source = square_caption(a, q1);
      p.caption_edited = square_caption(b, q1);
      p.instruction = std::string("Make the square ") + b.name + ".";
      p.summary = std::string("The ") + a.name + " square turned " + b.name + ".";
      break;
    case 1:
      draw_square(p.source, q1, a);
      p.caption_source = square_caption(a, q1);
      p.caption_edited = empty;
      p.instruction = "Remove the square.";
      p.summary = std::string("The ") + a.name + " square was removed.";
      break;
    case 2:
      draw_square(p.edited, q2, b);
      p.caption_source = empty;
      p.caption_edited = square_caption(b, q2);
      p.instruction = std::string("Add a ") + b.name + " square in the " + kQuadrants[q2] + " corner.";
      p.summary = std::string("A ") + b.name + " square appeared in the " + kQuadrants[q2] + " corner.";
      break;
    default:
      draw_square(p.source, q1, a);
      draw_square(p.edited, q2, a);
      p.caption_source = square_caption(a, q1);
      p.caption_edited = square_caption(a, q2);
      p.instruction = std::string("Move the square to the ") + kQuadrants[q2] + " corner.";
      p.summary = std::string("The ") + a.name + " square moved to the " + kQuadrants[q2] + " corner.";
      break;
  }
  return p;
}

}  // namespace

std::vector<SyntheticPair> synthesize_pairs(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size == 0 || size % 4 != 0) throw ConfigError({"synthesize_pairs: size must be a positive multiple of 4"});
  Rng rng(seed);
  std::vector<SyntheticPair> out;
  std::set<std::string> seen;
  std::size_t attempts = 0;
  while (out.size() < n) {
    if (++attempts > 100 * (n + 1)) throw ConfigError({"synthesize_pairs: cannot find enough distinct edits"});
    SyntheticPair p = make_pair(out.size() % 4, size, rng);
    if (!seen.insert(p.summary).second) continue;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%04zu", out.size() + 1);
    p.id = id;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace vixen
