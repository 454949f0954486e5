#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "ivp/datagen.hpp"
#include "ivp/errors.hpp"

namespace fs = std::filesystem;
using namespace ivp;

namespace {

DataConfig small_config() {
  DataConfig c;
  c.num_sequences = 4;
  c.height = c.width = 16;
  c.digit_size = 4;
  c.speed_min = 1;
  c.speed_max = 3;
  c.seed = 42;
  return c;
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "ivp_unit";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

// 4-connected components of pixels > 0 in one [H, W] frame.
int count_components(const torch::Tensor& frame) {
  auto a = frame.accessor<float, 2>();
  const int h = static_cast<int>(frame.size(0)), w = static_cast<int>(frame.size(1));
  std::vector<int> seen(static_cast<std::size_t>(h * w), 0);
  int count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (a[y][x] <= 0.0f || seen[static_cast<std::size_t>(y * w + x)]) continue;
      ++count;
      std::vector<std::pair<int, int>> stack{{y, x}};
      seen[static_cast<std::size_t>(y * w + x)] = 1;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        const int dy[] = {1, 1, 1, 0, 0, -1, -1, -1}, dx[] = {-1, 0, 1, -1, 1, -1, 0, 1};
        for (int k = 0; k < 8; ++k) {
          const int ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          if (a[ny][nx] <= 0.0f || seen[static_cast<std::size_t>(ny * w + nx)]) continue;
          seen[static_cast<std::size_t>(ny * w + nx)] = 1;
          stack.emplace_back(ny, nx);
        }
      }
    }
  }
  return count;
}

}  // namespace

TEST_CASE("reflection at the left edge flips velocity and mirrors position", "[datagen]") {
  ObjectState obj{0, 5, -2, 0, Glyph::square};
  step_object(obj, 4, 16, 16);
  CHECK(obj.x == 2);
  CHECK(obj.vx == 2);
  CHECK(obj.y == 5);
}

TEST_CASE("reflection at the right and bottom edges", "[datagen]") {
  // Largest legal top-left coordinate is 16 - 4 = 12.
  ObjectState obj{11, 12, 3, 1, Glyph::ring};
  step_object(obj, 4, 16, 16);
  CHECK(obj.x == 10);
  CHECK(obj.vx == -3);
  CHECK(obj.y == 11);
  CHECK(obj.vy == -1);
}

TEST_CASE("objects stay inside the frame over long runs", "[datagen]") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pos(0, 12), vel(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    ObjectState obj{pos(rng), pos(rng), vel(rng), vel(rng), Glyph::cross};
    for (int s = 0; s < 100; ++s) {
      step_object(obj, 4, 16, 16);
      REQUIRE(obj.x >= 0);
      REQUIRE(obj.y >= 0);
      REQUIRE(obj.x + 4 <= 16);
      REQUIRE(obj.y + 4 <= 16);
    }
  }
}

TEST_CASE("gen_sequence is deterministic in (seed, index)", "[datagen]") {
  auto cfg = small_config();
  auto a = gen_sequence(cfg, 2);
  auto b = gen_sequence(cfg, 2);
  CHECK(torch::equal(a.observed, b.observed));
  CHECK(torch::equal(a.future, b.future));
  auto c = gen_sequence(cfg, 3);
  CHECK_FALSE(torch::equal(a.observed, c.observed));
  cfg.seed = 43;
  CHECK_FALSE(torch::equal(a.observed, gen_sequence(cfg, 2).observed));
}

TEST_CASE("generated frames have the configured shape and lie in [0, 1]", "[datagen]") {
  auto cfg = small_config();
  cfg.t_obs = 6;
  cfg.t_fut = 4;
  for (int i = 0; i < cfg.num_sequences; ++i) {
    auto p = gen_sequence(cfg, i);
    CHECK(p.observed.sizes() == torch::IntArrayRef({6, 1, 16, 16}));
    CHECK(p.future.sizes() == torch::IntArrayRef({4, 1, 16, 16}));
    CHECK(p.observed.min().item<float>() >= 0.0f);
    CHECK(p.observed.max().item<float>() <= 1.0f);
    CHECK(p.future.min().item<float>() >= 0.0f);
    CHECK(p.future.max().item<float>() <= 1.0f);
    CHECK(p.observed.max().item<float>() > 0.0f);
  }
}

TEST_CASE("bright regions per frame never exceed the object count", "[datagen]") {
  auto cfg = small_config();
  cfg.num_sequences = 10;
  for (int i = 0; i < cfg.num_sequences; ++i) {
    auto p = gen_sequence(cfg, i);
    auto all = torch::cat({p.observed, p.future}, 0);
    for (std::int64_t t = 0; t < all.size(0); ++t) {
      const int n = count_components(all[t][0].contiguous());
      REQUIRE(n >= 1);
      REQUIRE(n <= cfg.num_objects);
    }
  }
}

TEST_CASE("invalid data configurations are rejected", "[datagen]") {
  auto cfg = small_config();
  cfg.digit_size = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(gen_sequence(cfg, 0), ConfigError);
  cfg = small_config();
  cfg.t_fut = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.num_objects = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config();
  CHECK_THROWS_AS(gen_sequence(cfg, cfg.num_sequences), ContractError);
}

TEST_CASE("dataset files round-trip bitwise", "[datagen][io]") {
  auto cfg = small_config();
  cfg.num_sequences = 3;
  auto pairs = gen_dataset(cfg);
  const auto path = temp_file("roundtrip.ivpd");
  write_dataset(pairs, path);
  auto back = read_dataset(path);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(torch::equal(back[i].observed, pairs[i].observed));
    CHECK(torch::equal(back[i].future, pairs[i].future));
  }
  const auto again = temp_file("roundtrip2.ivpd");
  write_dataset(back, again);
  CHECK(slurp(path) == slurp(again));
  // Header plus u8 records.
  CHECK(slurp(path).size() == 21 + 3 * 20 * 16 * 16);
}

TEST_CASE("non-binary values quantize to the nearest 1/255 step", "[datagen][io]") {
  SequencePair p{torch::full({1, 1, 2, 2}, 0.5f), torch::full({1, 1, 2, 2}, 0.2f)};
  const auto path = temp_file("quant.ivpd");
  write_dataset({p}, path);
  auto back = read_dataset(path);
  CHECK(back[0].observed[0][0][0][0].item<float>() == 128.0f / 255.0f);
  CHECK(back[0].future[0][0][0][0].item<float>() == 51.0f / 255.0f);
}

TEST_CASE("empty dataset round-trips to an empty list", "[datagen][io]") {
  const auto path = temp_file("empty.ivpd");
  write_dataset({}, path);
  CHECK(read_dataset(path).empty());
}

TEST_CASE("corrupted dataset files raise format errors", "[datagen][io]") {
  auto cfg = small_config();
  cfg.num_sequences = 2;
  const auto path = temp_file("good.ivpd");
  write_dataset(gen_dataset(cfg), path);
  const auto bytes = slurp(path);
  const auto bad = temp_file("bad.ivpd");

  auto magic = bytes;
  magic[0] = 'X';
  spit(bad, magic);
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  auto version = bytes;
  version[4] = 9;
  spit(bad, version);
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  spit(bad, bytes.substr(0, bytes.size() - 10));
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  spit(bad, bytes + "extra");
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  spit(bad, bytes.substr(0, 7));
  CHECK_THROWS_AS(read_dataset(bad), FormatError);

  CHECK_THROWS_AS(read_dataset(temp_file("missing.ivpd")), FormatError);
}

TEST_CASE("mixed shapes cannot be written", "[datagen][io]") {
  SequencePair a{torch::zeros({2, 1, 4, 4}), torch::zeros({2, 1, 4, 4})};
  SequencePair b{torch::zeros({2, 1, 8, 8}), torch::zeros({2, 1, 8, 8})};
  CHECK_THROWS_AS(write_dataset({a, b}, temp_file("mixed.ivpd")), ContractError);
}

TEST_CASE("make_batch stacks pairs along a leading axis", "[datagen]") {
  auto cfg = small_config();
  auto pairs = gen_dataset(cfg);
  auto batch = make_batch(pairs, {2, 0});
  CHECK(batch.observed.sizes() == torch::IntArrayRef({2, 10, 1, 16, 16}));
  CHECK(torch::equal(batch.observed[0], pairs[2].observed));
  CHECK(torch::equal(batch.future[1], pairs[0].future));
}
