#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "doctest.h"
#include "driftalign/audio_io.hpp"
#include "helpers.hpp"

namespace {

int run(const testing::TempDir& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.path().string() + "' && '" DRIFTALIGN_CLI "' " +
                          args + " > out.txt 2> err.txt";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string read(const std::filesystem::path& p) {
  std::ifstream f(p);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("exit codes") {
  testing::TempDir dir;
  CHECK(run(dir, "--help") == 0);
  CHECK(run(dir, "") == 2);
  CHECK(run(dir, "align --nope") == 2);
  CHECK(run(dir, "simulate --out d --drift affine:1.0,9") == 2);
  CHECK(read(dir / "err.txt").find("infeasible") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "d"));
  CHECK(run(dir, "simulate --out d --drift wobble") == 2);
  CHECK(run(dir, "train --manifest missing.json --out m.bin") == 2);

  REQUIRE(run(dir, "simulate --out d --n-pairs 2 --duration 6 --n-val 1 --n-test 0") == 0);
  CHECK(run(dir, "align --pair d/pair_000.wav --keypoints d/pair_000.csv --out p.csv") == 2);
  CHECK(run(dir, "align --pair d/pair_000.wav --keypoints d/pair_000.csv --out p.csv "
                 "--scorer nosync --candidates grid:0x3") == 2);
  CHECK(run(dir, "align --pair d/pair_000.wav --keypoints d/pair_000.csv --out p.csv "
                 "--scorer nosync --weights 0,0,0,0") == 2);

  {
    std::ofstream f(dir / "junk.wav");
    f << "not a wav file at all";
  }
  CHECK(run(dir, "align --pair junk.wav --keypoints d/pair_000.csv --out p.csv "
                 "--scorer nosync") == 1);
  CHECK(read(dir / "err.txt").rfind("error: ", 0) == 0);
}

TEST_CASE("nosync alignment and file evaluation") {
  testing::TempDir dir;
  REQUIRE(run(dir, "simulate --out d --n-pairs 1 --duration 6 --n-val 0 --n-test 1 "
                   "--drift affine:1.0,0.5") == 0);
  const auto m = driftalign::read_manifest(dir / "d/manifest.json");
  REQUIRE(m.entries.size() == 1);
  CHECK(m.entries[0].split == driftalign::Split::test);
  REQUIRE(run(dir, "align --pair d/pair_000.wav --keypoints d/pair_000.csv --out p.csv "
                   "--scorer nosync") == 0);
  const auto p = driftalign::read_predictions(dir / "p.csv");
  REQUIRE(p.size() == 6);
  for (const auto& e : p.entries) CHECK(*e.t1 == e.t0);
  CHECK(read(dir / "p.json").find("\"scorer\": \"nosync\"") != std::string::npos);
  REQUIRE(run(dir, "evaluate --pred p.csv --truth d/pair_000.csv") == 0);
  CHECK(read(dir / "out.txt") == "mse 0.250000000\n");
}

TEST_CASE("crosscorr alignment through the command line") {
  testing::TempDir dir;
  REQUIRE(run(dir, "simulate --out d --n-pairs 1 --duration 10 --n-val 0 --n-test 1 "
                   "--drift affine:1.0,-1.25") == 0);
  REQUIRE(run(dir, "align --manifest d/manifest.json --out-dir a --scorer crosscorr "
                   "--candidates grid:1x41") == 0);
  const auto p = driftalign::read_predictions(dir / "a/pair_000.csv");
  for (const auto& e : p.entries) CHECK(*e.t1 == doctest::Approx(e.t0 - 1.25).epsilon(1e-6));
  REQUIRE(run(dir, "evaluate --manifest d/manifest.json --scorer crosscorr") == 0);
  CHECK(read(dir / "out.txt").rfind("dataset,pair_id,mse\nsynthetic,pair_000,", 0) == 0);
}

TEST_CASE("embedding inspection") {
  testing::TempDir dir;
  driftalign::EmbeddingMatrix e{2, 3, {1, 2, 3, 4, 5, 6}};
  driftalign::write_embeddings(e, dir / "e.bin");
  REQUIRE(run(dir, "embeddings e.bin") == 0);
  CHECK(read(dir / "out.txt") == "count 2\ndim 3\nnon_finite 0\n");
  e.values[4] = std::numeric_limits<float>::quiet_NaN();
  driftalign::write_embeddings(e, dir / "n.bin");
  CHECK(run(dir, "embeddings n.bin") == 1);
}
