#include "regionedit/toyzoo/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "regionedit/rng.hpp"

namespace regionedit::toyzoo {

namespace {

struct Placement {
  Attributes attributes;
  double cy = 0;
  double cx = 0;
  int size = 0;
};

Image render_background(Rng& rng) {
  const double base = rng.uniform(-0.35, 0.25);
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(-0.05, 0.05);
  struct Wave {
    double fy, fx, phase, amplitude;
  };
  std::array<Wave, 2> waves{};
  for (Wave& w : waves) {
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double freq = rng.uniform(0.1, 0.35);
    w = {freq * std::sin(angle), freq * std::cos(angle), rng.uniform(0.0, 2 * std::numbers::pi),
         rng.uniform(0.04, 0.1)};
  }
  Image image(Shape3{kImageSize, kImageSize, 3});
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      double v = base;
      for (const Wave& w : waves) v += w.amplitude * std::sin(w.fy * y + w.fx * x + w.phase);
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = v + tint[static_cast<std::size_t>(c)];
    }
  }
  return image;
}

bool overlaps(const RegionMask& a, const RegionMask& b) {
  // One pixel of clearance between entities.
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      if (a.at(y, x) == 0) continue;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy;
          const int xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < b.height() && xx < b.width() && b.at(yy, xx) != 0) {
            return true;
          }
        }
      }
    }
  }
  return false;
}

Placement random_placement(Rng& rng, Attributes attributes) {
  Placement p;
  p.attributes = attributes;
  p.size = rng.uniform_int(10, 16);
  const double half = p.size / 2.0;
  p.cy = rng.uniform(half + 1.0, kImageSize - half - 1.0);
  p.cx = rng.uniform(half + 1.0, kImageSize - half - 1.0);
  return p;
}

void paint(Image& image, const RegionMask& mask, Color color, double brightness) {
  const auto rgb = palette(color);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (mask.at(y, x) == 0) continue;
      for (int c = 0; c < 3; ++c) {
        image.at(y, x, c) = std::clamp(rgb[static_cast<std::size_t>(c)] + brightness, -1.0, 1.0);
      }
    }
  }
}

}  // namespace

std::array<double, 3> palette(Color color) {
  switch (color) {
    case Color::kRed:
      return {0.8, -0.6, -0.6};
    case Color::kGreen:
      return {-0.6, 0.7, -0.6};
    case Color::kBlue:
      return {-0.6, -0.5, 0.8};
  }
  return {0, 0, 0};
}

Attributes Attributes::from_class(int index) {
  if (index < 0 || index >= kNumClasses) throw InvalidArgument("class", "out of range");
  return {static_cast<ShapeKind>(index % kNumShapes), static_cast<Color>(index / kNumShapes)};
}

std::string caption(Attributes attributes) {
  return "a " + std::string(kColorNames[static_cast<std::size_t>(attributes.color)]) + " " +
         std::string(kShapeNames[static_cast<std::size_t>(attributes.shape)]);
}

ParsedPrompt parse_prompt(std::string_view prompt) {
  ParsedPrompt out;
  std::vector<std::string> words;
  std::string current;
  for (char ch : prompt) {
    if (std::isalpha(static_cast<unsigned char>(ch))) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  if (words.empty()) {
    out.empty = true;
    return out;
  }
  for (const std::string& w : words) {
    for (int i = 0; i < kNumColors; ++i) {
      if (w == kColorNames[static_cast<std::size_t>(i)]) out.color = static_cast<Color>(i);
    }
    for (int i = 0; i < kNumShapes; ++i) {
      if (w == kShapeNames[static_cast<std::size_t>(i)]) out.shape = static_cast<ShapeKind>(i);
    }
  }
  if (!out.color && !out.shape) {
    throw InvalidArgument("prompt", "no known color or shape in \"" + std::string(prompt) + "\"");
  }
  return out;
}

RegionMask rasterize(ShapeKind shape, double cy, double cx, int size, int image_size) {
  RegionMask mask(PlaneShape{image_size, image_size});
  const double half = size / 2.0;
  const double top = cy - half;
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      const double py = y + 0.5;
      const double dx = x + 0.5 - cx;
      const double dy = py - cy;
      bool inside = false;
      switch (shape) {
        case ShapeKind::kSquare:
          inside = std::abs(dy) <= half && std::abs(dx) <= half;
          break;
        case ShapeKind::kCircle:
          inside = dx * dx + dy * dy <= half * half;
          break;
        case ShapeKind::kTriangle:
          inside = std::abs(dy) <= half && std::abs(dx) <= (py - top) / 2.0 + 0.25;
          break;
      }
      mask.at(y, x) = inside ? 1 : 0;
    }
  }
  return mask;
}

std::vector<ShapeSample> generate_dataset(int n, std::uint64_t seed, DatasetOptions options) {
  if (n < 1) throw InvalidArgument("n", "must be >= 1");
  Rng rng(seed, Stream::kDataset);
  std::vector<ShapeSample> out;
  out.reserve(static_cast<std::size_t>(n));
  std::array<int, kNumClasses> block{};
  for (int i = 0; i < n; ++i) {
    if (i % kNumClasses == 0) {
      for (int k = 0; k < kNumClasses; ++k) block[static_cast<std::size_t>(k)] = k;
      std::shuffle(block.begin(), block.end(), rng.engine());
    }
    const Attributes primary = Attributes::from_class(block[static_cast<std::size_t>(i % kNumClasses)]);

    ShapeSample sample;
    sample.image = render_background(rng);
    const Placement first = random_placement(rng, primary);
    std::vector<Placement> placements{first};
    std::vector<RegionMask> masks{rasterize(first.attributes.shape, first.cy, first.cx, first.size)};

    if (options.max_entities >= 2 && rng.bernoulli(options.second_entity_probability)) {
      // Second entity differs from the first in both color and shape.
      Attributes second;
      second.color = static_cast<Color>((static_cast<int>(primary.color) + rng.uniform_int(1, 2)) %
                                        kNumColors);
      second.shape = static_cast<ShapeKind>(
          (static_cast<int>(primary.shape) + rng.uniform_int(1, 2)) % kNumShapes);
      for (int attempt = 0; attempt < 40; ++attempt) {
        const Placement p = random_placement(rng, second);
        RegionMask m = rasterize(p.attributes.shape, p.cy, p.cx, p.size);
        if (!overlaps(m, masks.front())) {
          placements.push_back(p);
          masks.push_back(std::move(m));
          break;
        }
      }
    }

    for (std::size_t k = 0; k < placements.size(); ++k) {
      paint(sample.image, masks[k], placements[k].attributes.color, rng.uniform(-0.08, 0.08));
      sample.entities.push_back({placements[k].attributes, masks[k]});
    }
    sample.attributes = primary;
    sample.caption = caption(primary);
    sample.gt_mask = masks.front();
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace regionedit::toyzoo
