#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "olab/engine.hpp"
#include "olab/errors.hpp"
#include "olab/imaging.hpp"

using namespace olab::engine;
using namespace olab::imaging;

TEST_CASE("render spec validation") {
  RenderSpec spec;
  spec.validate();  // 600 is fine
  spec.image_side = 100;  // not divisible by 8
  CHECK_THROWS_AS(spec.validate(), olab::ConfigError);
  spec.image_side = 64;  // not divisible by 20
  CHECK_THROWS_AS(spec.validate(), olab::ConfigError);
  spec.image_side = 40;
  spec.validate();
}

TEST_CASE("rendering is deterministic and sized correctly") {
  RenderSpec spec;
  spec.image_side = 40;
  const Board b = Board::initial();
  const BoardImage a = render(b, spec);
  CHECK(a.height == 40);
  CHECK(a.width == 40);
  CHECK(a.pixels.size() == 40u * 40u * 3u);
  CHECK(a == render(b, spec));
}

TEST_CASE("distinct boards render distinctly") {
  RenderSpec spec;
  spec.image_side = 40;
  const Board b = Board::initial();
  const Board c = apply_move(b, parse_notation("D3"));
  CHECK_FALSE(render(b, spec) == render(c, spec));
}

TEST_CASE("render commutes with 180-degree rotation exactly") {
  RenderSpec spec;
  spec.image_side = 40;
  std::vector<int> sides = {40, 80, 600};
  for (int side : sides) {
    spec.image_side = side;
    GameRecord game = generate_random_game(3);
    Board b = Board::initial();
    for (Square m : game.moves) {
      CHECK(render(rotate_board(b), spec) == rotate_image_180(render(b, spec)));
      b = apply_move(b, m);
    }
  }
}

TEST_CASE("rotate_image_180 is an involution") {
  const BoardImage img = render(Board::initial());
  CHECK(rotate_image_180(rotate_image_180(img)) == img);
}

TEST_CASE("pool features have the documented layout and scale") {
  RenderSpec spec;
  const BoardImage img = render(Board::initial(), spec);
  const auto feats = pool_features(img);
  REQUIRE(feats.size() == 1200);
  for (double v : feats) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // patch (0,0) is grid + background only; verify channel-major indexing by
  // recomputing the mean of the red channel over the top-left 30x30 block.
  double sum = 0;
  for (int r = 0; r < 30; ++r)
    for (int c = 0; c < 30; ++c) sum += img.at(r, c, 0);
  CHECK(feats[0] == doctest::Approx(sum / (30 * 30 * 255.0)).epsilon(1e-12));
}

TEST_CASE("area features equal pool features when the side divides evenly") {
  RenderSpec spec;
  spec.image_side = 600;
  const BoardImage img = render(Board::initial(), spec);
  const auto pool = pool_features(img);
  const auto area = area_features(img);
  REQUIRE(pool.size() == area.size());
  for (size_t i = 0; i < pool.size(); ++i) CHECK(pool[i] == doctest::Approx(area[i]).epsilon(1e-9));
}

TEST_CASE("png writer emits a well-formed header") {
  const std::string path = "test_render.png";
  write_png(path, render(Board::initial()));
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  unsigned char sig[8];
  in.read(reinterpret_cast<char*>(sig), 8);
  const unsigned char expect[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  for (int i = 0; i < 8; ++i) CHECK(sig[i] == expect[i]);
  in.close();
  std::remove(path.c_str());
}
