#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "regionedit/tensor.hpp"

namespace regionedit::toyzoo {

enum class ShapeKind { kSquare = 0, kCircle = 1, kTriangle = 2 };
enum class Color { kRed = 0, kGreen = 1, kBlue = 2 };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 3;
inline constexpr int kNumClasses = kNumShapes * kNumColors;
inline constexpr int kImageSize = 32;

inline constexpr std::array<std::string_view, kNumShapes> kShapeNames{"square", "circle",
                                                                      "triangle"};
inline constexpr std::array<std::string_view, kNumColors> kColorNames{"red", "green", "blue"};

// RGB in [-1, 1].
std::array<double, 3> palette(Color color);

struct Attributes {
  ShapeKind shape = ShapeKind::kSquare;
  Color color = Color::kRed;

  int class_index() const noexcept { return static_cast<int>(color) * kNumShapes + static_cast<int>(shape); }
  static Attributes from_class(int index);

  friend bool operator==(const Attributes&, const Attributes&) = default;
};

// "a {color} {shape}"
std::string caption(Attributes attributes);

// Prompt words recognized by the toy grammar. Either part may be absent.
struct ParsedPrompt {
  std::optional<Color> color;
  std::optional<ShapeKind> shape;
  bool empty = false;  // no words at all
};
// Throws InvalidArgument when the prompt has words but none from the grammar.
ParsedPrompt parse_prompt(std::string_view prompt);

struct Entity {
  Attributes attributes;
  RegionMask mask;  // exactly the rendered pixels
};

struct ShapeSample {
  Image image;
  std::string caption;      // describes entities[0]
  RegionMask gt_mask;       // mask of entities[0]
  Attributes attributes;    // of entities[0]
  std::vector<Entity> entities;
};

struct DatasetOptions {
  int max_entities = 2;
  double second_entity_probability = 0.5;
};

// Deterministic given (n, seed). Primary attributes cycle through all nine
// classes in shuffled blocks, so marginals are balanced.
std::vector<ShapeSample> generate_dataset(int n, std::uint64_t seed, DatasetOptions options = {});

// Pixels covered by a shape of side `size` centred at (cy, cx).
RegionMask rasterize(ShapeKind shape, double cy, double cx, int size, int image_size = kImageSize);

}  // namespace regionedit::toyzoo
