#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include "maskpos/io.hpp"

using namespace maskpos;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("maskpos_test_io_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<std::uint8_t> pixels(const std::vector<std::uint8_t>& pgm, std::size_t count) {
  return {pgm.end() - static_cast<std::ptrdiff_t>(count), pgm.end()};
}

}  // namespace

TEST(Csv, RoundTripIsBitExact) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::uint64_t> bits;
  for (int rep = 0; rep < 200; ++rep) {
    Matrix m(1 + rep % 7, 1 + rep % 5);
    for (auto& v : m.values()) {
      double x;
      do {
        const std::uint64_t b = bits(rng);
        std::memcpy(&x, &b, sizeof x);
      } while (!std::isfinite(x));
      v = x;
    }
    const Matrix back = io::parse_csv(io::format_csv(m));
    ASSERT_EQ(back.rows(), m.rows());
    ASSERT_EQ(back.cols(), m.cols());
    for (std::size_t k = 0; k < m.values().size(); ++k) {
      ASSERT_EQ(back.values()[k], m.values()[k]);
      ASSERT_EQ(std::signbit(back.values()[k]), std::signbit(m.values()[k]));
    }
  }
}

TEST(Csv, EdgeValues) {
  Matrix m(1, 4);
  m(0, 0) = std::numeric_limits<double>::denorm_min();
  m(0, 1) = std::numeric_limits<double>::max();
  m(0, 2) = -0.0;
  m(0, 3) = 0.1;
  EXPECT_EQ(io::parse_csv(io::format_csv(m)), m);
  EXPECT_TRUE(std::signbit(io::parse_csv(io::format_csv(m))(0, 2)));
}

TEST(Csv, MalformedInputRejected) {
  for (const char* text : {"1,2\n3\n", "1,abc\n", "1,,2\n", "1,2x\n"}) {
    try {
      io::parse_csv(text);
      FAIL() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::io) << text;
    }
  }
  EXPECT_THROW(io::read_csv("/nonexistent/dir/x.csv"), Error);
}

TEST(Csv, FileRoundTrip) {
  const fs::path dir = fresh_dir("csv");
  fs::create_directories(dir);
  Matrix m(2, 3);
  m(1, 2) = 0.125;
  io::write_csv(m, dir / "m.csv");
  EXPECT_EQ(io::read_csv(dir / "m.csv"), m);
  fs::remove_all(dir);
}

TEST(Pgm, TwoByTwoExample) {
  Matrix two(2, 2);
  two(0, 0) = 1.0;
  two(1, 0) = 0.5;
  two(1, 1) = 1.0;
  const auto bytes = io::render_pgm(two, 0.0, 1.0, false);
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())), header);
  EXPECT_EQ(pixels(bytes, 4), (std::vector<std::uint8_t>{255, 0, 128, 255}));
}

TEST(Pgm, ConstantMatrixIsWhite) {
  const auto bytes = io::render_pgm(Matrix(3, 3, 0.4), 0.0, 1.0, false);
  for (auto px : pixels(bytes, 9)) EXPECT_EQ(px, 255);
}

TEST(Pgm, CausalBlanksUpperTriangle) {
  Matrix m(3, 3);
  m(0, 1) = 100.0;  // would dominate the range if it were counted
  m(0, 2) = -100.0;
  m(0, 0) = 1.0;
  m(1, 1) = 1.0;
  m(2, 2) = 1.0;
  m(1, 0) = 0.0;
  m(2, 0) = 0.0;
  m(2, 1) = 0.5;
  const auto px = pixels(io::render_pgm(m, 0.0, 1.0, true), 9);
  EXPECT_EQ(px, (std::vector<std::uint8_t>{255, 0, 0, 0, 255, 0, 0, 128, 255}));
}

TEST(Pgm, QuantileClipSaturatesOutliers) {
  Matrix m(10, 10);
  for (std::size_t k = 0; k < 100; ++k) m.values()[k] = static_cast<double>(k);
  m.values()[99] = 1e9;
  const auto px = pixels(io::render_pgm(m, 0.0, 0.99, false), 100);
  EXPECT_EQ(px[0], 0);
  EXPECT_EQ(px[98], 255);
  EXPECT_EQ(px[99], 255);
  EXPECT_GT(px[50], 100);
}

TEST(Manifest, TextRoundTrip) {
  io::Manifest m{{"a", "1"}, {"mode", "rope-decoder"}, {"theta", "500"}};
  EXPECT_EQ(io::parse_manifest(io::format_manifest(m)), m);
}

TEST(Manifest, SpecRoundTrip) {
  experiments::ExperimentSpec s;
  s.mode = experiments::Mode::rope_encoder;
  s.n = 12;
  s.d = 32;
  s.alpha = 0.35;
  s.layers = 2;
  s.trials = 77;
  s.master_seed = 0xFFFFFFFFFFFFFFFFull;
  s.norm = sim::Norm::layernorm;
  s.scale = sim::ScoreScale::sqrt_d;
  s.residual = false;
  s.theta = 123.5;
  const auto manifest = io::manifest_for(s);
  EXPECT_EQ(manifest.at("masked"), "none");
  const auto back = io::spec_from_manifest(io::parse_manifest(io::format_manifest(manifest)));
  EXPECT_EQ(back.mode, s.mode);
  EXPECT_EQ(back.n, s.n);
  EXPECT_EQ(back.d, s.d);
  EXPECT_EQ(back.alpha, s.alpha);
  EXPECT_EQ(back.layers, s.layers);
  EXPECT_EQ(back.trials, s.trials);
  EXPECT_EQ(back.master_seed, s.master_seed);
  EXPECT_EQ(back.norm, s.norm);
  EXPECT_EQ(back.scale, s.scale);
  EXPECT_EQ(back.residual, s.residual);
  EXPECT_EQ(back.theta, s.theta);
}

TEST(SimulateToDir, FileSetAndOverwriteRules) {
  const fs::path dir = fresh_dir("sim");
  experiments::ExperimentSpec s;
  s.n = 5;
  s.d = 8;
  s.layers = 2;
  s.trials = 1;
  const auto written = io::simulate_to_dir(s, dir, false, 1);
  for (const char* name : {"layer1_mean.csv", "layer1_stderr.csv", "layer2_scores_mean.csv", "layer2_gram_mean.csv",
                           "layer2_gram_stderr.csv", "manifest.txt"})
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  EXPECT_FALSE(fs::exists(dir / "layer1_dn_mean.csv"));
  EXPECT_EQ(written.size(), 11u);

  const Matrix se = io::read_csv(dir / "layer2_stderr.csv");
  for (double v : se.values()) EXPECT_EQ(v, 0.0);
  const Matrix mean = io::read_csv(dir / "layer1_mean.csv");
  EXPECT_EQ(mean.rows(), 5u);

  const std::string before = io::read_file(dir / "layer2_mean.csv");
  try {
    io::simulate_to_dir(s, dir, false, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  io::simulate_to_dir(s, dir, true, 2);
  EXPECT_EQ(io::read_file(dir / "layer2_mean.csv"), before);
  fs::remove_all(dir);
}

TEST(SimulateToDir, RopeModesWriteNormalizedMaps) {
  const fs::path dir = fresh_dir("rope");
  experiments::ExperimentSpec s;
  s.mode = experiments::Mode::rope_decoder;
  s.n = 4;
  s.d = 8;
  s.layers = 1;
  s.trials = 3;
  io::simulate_to_dir(s, dir, false, 1);
  for (const char* name : {"layer1_dn_mean.csv", "layer1_dn_stderr.csv", "layer1_scores_dn_mean.csv",
                           "layer1_scores_dn_stderr.csv"})
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  EXPECT_FALSE(fs::exists(dir / "layer2_gram_mean.csv"));
  EXPECT_EQ(io::parse_manifest(io::read_file(dir / "manifest.txt")).at("theta"), "10000");
  fs::remove_all(dir);
}
