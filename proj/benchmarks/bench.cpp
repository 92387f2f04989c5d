#include <benchmark/benchmark.h>

#include <random>

#include "olab/engine.hpp"
#include "olab/imaging.hpp"
#include "olab/ops.hpp"

using namespace olab;

static void BM_LegalMoveMask(benchmark::State& state) {
  engine::Board b = engine::Board::initial();
  const engine::GameRecord game = engine::generate_random_game(1);
  std::vector<engine::Board> boards = engine::replay(game);
  size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(engine::legal_move_mask(boards[i % boards.size()]));
    ++i;
  }
}
BENCHMARK(BM_LegalMoveMask);

static void BM_ApplyMove(benchmark::State& state) {
  const engine::GameRecord game = engine::generate_random_game(2);
  const std::vector<engine::Board> boards = engine::replay(game);
  size_t i = 0;
  for (auto _ : state) {
    const size_t t = i % game.moves.size();
    benchmark::DoNotOptimize(engine::apply_move(boards[t], game.moves[t]));
    ++i;
  }
}
BENCHMARK(BM_ApplyMove);

static void BM_Perft(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(engine::perft(static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Perft)->Arg(4)->Arg(5);

static void BM_Render(benchmark::State& state) {
  imaging::RenderSpec spec;
  spec.image_side = static_cast<int>(state.range(0));
  const engine::Board b = engine::Board::initial();
  for (auto _ : state) benchmark::DoNotOptimize(imaging::render(b, spec));
}
BENCHMARK(BM_Render)->Arg(40)->Arg(600);

static void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(3);
  nn::Tensor a = nn::Tensor::truncated_normal({n, n}, 1.0, rng);
  nn::Tensor b = nn::Tensor::truncated_normal({n, n}, 1.0, rng);
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

static void BM_Conv2d(benchmark::State& state) {
  std::mt19937_64 rng(4);
  nn::Tensor x = nn::Tensor::truncated_normal({8, 3, 40, 40}, 1.0, rng);
  nn::Tensor w = nn::Tensor::truncated_normal({16, 3, 3, 3}, 1.0, rng);
  nn::Tensor b = nn::Tensor::zeros({16});
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, w, b, 1, 1));
}
BENCHMARK(BM_Conv2d);

BENCHMARK_MAIN();
