#include "tijo/task.hpp"

#include "tijo/rng.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>

namespace tijo {

namespace {

constexpr std::array<std::array<double, 3>, kNumColors> kPalette{{
    {0.90, 0.15, 0.10},  // red
    {0.10, 0.85, 0.25},  // green
    {0.15, 0.30, 0.95},  // blue
    {0.95, 0.85, 0.15},  // yellow
}};

// Shape footprints inside a 16x16 cell, as [row0, row1) x [col0, col1).
struct Footprint {
  int r0, r1, c0, c1;
};
constexpr std::array<Footprint, kNumShapes> kShapes{{
    {3, 11, 3, 11},  // square
    {5, 9, 3, 11},   // horizontal bar
    {3, 11, 5, 9},   // vertical bar
    {5, 9, 5, 9},    // dot
}};

}  // namespace

Image::Image(int h, int w, double fill) : height(h), width(w) {
  for (auto& c : channels) c = Mat::Constant(h, w, fill);
}

bool Image::operator==(const Image& other) const {
  if (height != other.height || width != other.width) return false;
  for (int c = 0; c < 3; ++c) {
    if (channels[c] != other.channels[c]) return false;
  }
  return true;
}

double Image::min_value() const {
  double v = channels[0].minCoeff();
  for (int c = 1; c < 3; ++c) v = std::min(v, channels[c].minCoeff());
  return v;
}

double Image::max_value() const {
  double v = channels[0].maxCoeff();
  for (int c = 1; c < 3; ++c) v = std::max(v, channels[c].maxCoeff());
  return v;
}

Image solid_image(int size, double r, double g, double b) {
  Image img(size, size);
  img.channels[0].setConstant(r);
  img.channels[1].setConstant(g);
  img.channels[2].setConstant(b);
  return img;
}

Rect cell_rect(int cell) {
  const int side = kImageSize / kGrid;
  return {(cell / kGrid) * side, (cell % kGrid) * side, side, side};
}

Image render_world(const World& world) {
  Image img(kImageSize, kImageSize, 0.0);
  for (int cell = 0; cell < kCells; ++cell) {
    const Rect r = cell_rect(cell);
    const Footprint& f = kShapes.at(world[cell].shape);
    const auto& rgb = kPalette.at(world[cell].color);
    for (int c = 0; c < 3; ++c) {
      img.channels[c].block(r.row + f.r0, r.col + f.c0, f.r1 - f.r0, f.c1 - f.c0).setConstant(rgb[c]);
    }
  }
  return img;
}

int answer_for(const World& world, int cell, Attribute attribute) {
  const Cell& obj = world.at(cell);
  return attribute == Attribute::kColor ? obj.color : kNumColors + obj.shape;
}

namespace {

Sample make_sample(const World& world, int cell, Attribute attribute, Question question, bool render = true) {
  Sample s;
  s.world = world;
  s.cell = cell;
  s.attribute = attribute;
  s.question = std::move(question);
  s.answer = answer_for(world, cell, attribute);
  if (render) s.image = render_world(world);
  return s;
}

}  // namespace

Dataset gen_dataset(std::uint64_t seed, std::size_t n, bool render_images) {
  if (n < 1) throw std::invalid_argument("gen_dataset: n must be >= 1");
  Rng rng = make_rng(seed, "dataset");
  Dataset ds;
  ds.seed = seed;
  ds.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    World world;
    for (auto& obj : world) {
      obj.shape = static_cast<int>(uniform_index(rng, kNumShapes));
      obj.color = static_cast<int>(uniform_index(rng, kNumColors));
    }
    const int cell = static_cast<int>(uniform_index(rng, kCells));
    const auto attribute = static_cast<Attribute>(uniform_index(rng, 2));
    const int fillers = static_cast<int>(uniform_index(rng, kMaxCleanQuestionLength - 1));
    Question q;
    for (int f = 0; f < fillers; ++f) {
      q.push_back(kFirstFillerToken + static_cast<int>(uniform_index(rng, kNumFillerTokens)));
    }
    q.push_back(kFirstCellToken + cell);
    q.push_back(attribute == Attribute::kColor ? kColorToken : kShapeToken);
    ds.samples.push_back(make_sample(world, cell, attribute, std::move(q), render_images));
  }
  return ds;
}

void save_dataset_manifest(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json{{"seed", dataset.seed}, {"n", dataset.size()}}.dump() << '\n';
  for (const Sample& s : dataset.samples) {
    nlohmann::json world = nlohmann::json::array();
    for (const Cell& c : s.world) world.push_back({c.shape, c.color});
    out << nlohmann::json{{"world", world},
                          {"cell", s.cell},
                          {"attribute", static_cast<int>(s.attribute)},
                          {"question", s.question},
                          {"answer", s.answer}}
               .dump()
        << '\n';
  }
}

Dataset load_dataset_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset manifest " + path.string());
  const auto header = nlohmann::json::parse(line);
  Dataset ds;
  ds.seed = header.at("seed").get<std::uint64_t>();
  const auto n = header.at("n").get<std::size_t>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    World world;
    for (int c = 0; c < kCells; ++c) {
      world[c].shape = rec.at("world").at(c).at(0).get<int>();
      world[c].color = rec.at("world").at(c).at(1).get<int>();
    }
    Sample s = make_sample(world, rec.at("cell").get<int>(),
                           static_cast<Attribute>(rec.at("attribute").get<int>()),
                           rec.at("question").get<Question>());
    if (s.answer != rec.at("answer").get<int>()) {
      throw std::runtime_error("dataset manifest answer disagrees with its latent world");
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.size() != n) throw std::runtime_error("dataset manifest sample count mismatch");
  return ds;
}

}  // namespace tijo
