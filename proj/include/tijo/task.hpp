#pragma once

// Procedural multimodal task: a 2x2 grid of (shape, color) objects rendered into a
// 32x32 RGB image, and questions that ask for one attribute of one grid cell.

#include "tijo/grad.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tijo {

inline constexpr int kImageSize = 32;
inline constexpr int kGrid = 2;
inline constexpr int kCells = kGrid * kGrid;
inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 4;
inline constexpr int kNumClasses = kNumColors + kNumShapes;

// Vocabulary: id 0 is reserved (PAD, also the inversion initializer), ids 1..64 are content.
inline constexpr int kVocabSize = 65;
inline constexpr int kPadToken = 0;
inline constexpr int kFirstCellToken = 1;    // 1..4
inline constexpr int kColorToken = 5;
inline constexpr int kShapeToken = 6;
inline constexpr int kFirstFillerToken = 7;  // 7..16
inline constexpr int kNumFillerTokens = 10;
/// First id never used by clean questions; backdoor trigger tokens are drawn from here up.
inline constexpr int kFirstFreeToken = kFirstFillerToken + kNumFillerTokens;
inline constexpr int kMaxQuestionLength = 6;
inline constexpr int kMaxCleanQuestionLength = 5;

using Question = std::vector<int>;

struct Image {
  int height = 0;
  int width = 0;
  std::array<Mat, 3> channels;

  Image() = default;
  Image(int h, int w, double fill = 0.0);

  double& at(int c, int row, int col) { return channels[c](row, col); }
  double at(int c, int row, int col) const { return channels[c](row, col); }

  bool operator==(const Image& other) const;
  double min_value() const;
  double max_value() const;
};

/// Solid-color image.
Image solid_image(int size, double r, double g, double b);

enum class Attribute { kColor = 0, kShape = 1 };

struct Cell {
  int shape = 0;
  int color = 0;
  bool operator==(const Cell&) const = default;
};

using World = std::array<Cell, kCells>;

enum class SampleTag { kClean, kPoisoned, kTextKeyOnly, kImageKeyOnly };

struct Sample {
  World world{};
  int cell = 0;
  Attribute attribute = Attribute::kColor;
  Question question;
  int answer = 0;
  Image image;
  SampleTag tag = SampleTag::kClean;
};

struct Dataset {
  std::uint64_t seed = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

Image render_world(const World& world);
int answer_for(const World& world, int cell, Attribute attribute);

/// Rectangle of grid cell `cell` (row-major) in image coordinates.
struct Rect {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;
};
Rect cell_rect(int cell);

/// Deterministic clean dataset of n samples; throws std::invalid_argument when n < 1.
/// With render_images false the images are left empty (0x0) and only the latent worlds are
/// kept; the random draws, and so every other field, are identical either way.
Dataset gen_dataset(std::uint64_t seed, std::size_t n, bool render_images = true);

/// JSON-lines manifest: a header line {seed, n} then one line per sample with its
/// latent world, question and answer. Images are re-rendered on load.
void save_dataset_manifest(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset_manifest(const std::filesystem::path& path);

}  // namespace tijo
