#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "causeloc/error.hpp"
#include "causeloc/matrix_store.hpp"
#include "causeloc/rng.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace causeloc;

namespace {

ResponseMatrix column_matrix(const std::vector<std::vector<float>>& cols) {
  std::vector<std::string> images, voxels;
  for (std::size_t i = 0; i < cols[0].size(); ++i) images.push_back(gen::id("i", i));
  for (std::size_t v = 0; v < cols.size(); ++v) voxels.push_back(gen::id("v", v));
  ResponseMatrix m(images, voxels);
  for (std::size_t v = 0; v < cols.size(); ++v) {
    for (std::size_t i = 0; i < cols[v].size(); ++i) m.at(i, v) = cols[v][i];
  }
  return m;
}

ErrorCode decode_error(const std::string& bytes) {
  try {
    decode_matrix(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("decode did not throw");
  return ErrorCode::InvalidArgument;
}

void put_u64(std::string& bytes, std::size_t offset, std::uint64_t v) {
  std::memcpy(bytes.data() + offset, &v, sizeof(v));
}

}  // namespace

TEST_CASE("zscore of a two-image column") {
  auto n = zscore_normalize(column_matrix({{1.0f, 3.0f}}));
  CHECK(n.matrix.at(0, 0) == -1.0f);
  CHECK(n.matrix.at(1, 0) == 1.0f);
  CHECK(n.stats.mean[0] == 2.0);
  CHECK(n.stats.stddev[0] == 1.0);
}

TEST_CASE("zscore drops constant voxels") {
  auto n = zscore_normalize(column_matrix({{5, 5, 5}, {1, 2, 3}}));
  CHECK(n.stats.dead_voxel_ids == std::vector<std::string>{"v000"});
  CHECK(n.matrix.voxel_ids == std::vector<std::string>{"v001"});
  CHECK_THROWS_AS(zscore_normalize(column_matrix({{1.0f}})), Error);
}

TEST_CASE("zscore moments and idempotence") {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    auto m = gen::matrix(rng, 3 + rng.below(40), 1 + rng.below(10));
    for (auto& x : m.values) x = x * 3.0f + 7.0f;
    auto n = zscore_normalize(m).matrix;
    for (std::size_t v = 0; v < n.n_voxels(); ++v) {
      auto col = n.column(v);
      double mean = oracle::mean(col), ss = 0.0;
      for (double x : col) ss += (x - mean) * (x - mean);
      CHECK(std::abs(mean) < 1e-6);
      CHECK(std::abs(std::sqrt(ss / col.size()) - 1.0) < 1e-5);
    }
    auto twice = zscore_normalize(n).matrix;
    REQUIRE(twice.voxel_ids == n.voxel_ids);
    for (std::size_t i = 0; i < n.values.size(); ++i) CHECK(std::abs(twice.values[i] - n.values[i]) < 1e-5);
  }
}

TEST_CASE("apply normalization reuses stats") {
  auto ref = column_matrix({{1, 3}, {2, 2}});
  auto n = zscore_normalize(ref);
  auto other = apply_normalization(column_matrix({{5, 1}, {0, 0}}), n.stats);
  CHECK(other.voxel_ids == std::vector<std::string>{"v000"});
  CHECK(other.at(0, 0) == 3.0f);
}

TEST_CASE("pearson examples") {
  std::vector<double> a{1, 2, 3}, b{3, 2, 1}, c{1, 2, 4};
  CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(a, b) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(std::abs(pearson(a, c) - 0.98198) < 1e-4);
  CHECK(std::abs(pearson(a, c) - oracle::pearson(a, c)) < 1e-12);
  CHECK_THROWS_AS(pearson(a, std::vector<double>{2, 2, 2}), Error);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST_CASE("pearson symmetry and affine invariance") {
  Rng rng(9);
  for (int t = 0; t < 200; ++t) {
    std::size_t n = 2 + rng.below(30);
    std::vector<double> x(n), y(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal() + 0.5 * x[i];
    }
    double a = 0.1 + rng.uniform() * 5.0, off = rng.normal() * 10.0;
    for (std::size_t i = 0; i < n; ++i) z[i] = a * x[i] + off;
    CHECK(std::abs(pearson(x, y) - pearson(y, x)) < 1e-12);
    CHECK(std::abs(pearson(z, y) - pearson(x, y)) < 1e-9);
  }
}

TEST_CASE("reliability filter") {
  auto meas = column_matrix({{1, 2, 3, 4}, {1, 2, 3, 4}, {4, 4, 4, 4}});
  auto pred = column_matrix({{1, 2, 3, 4}, {4, 3, 2, 1}, {1, 2, 3, 5}});
  pred.provenance = Provenance::Predicted;
  meas.provenance = Provenance::Measured;
  auto mask = filter_voxels_by_reliability(pred, meas, 0.2);
  CHECK(mask.keep == std::vector<bool>{true, false, false});
  CHECK(mask.correlation[0] == doctest::Approx(1.0));
  CHECK(std::isnan(mask.correlation[2]));
  CHECK(mask.warnings.size() == 1);
  CHECK(mask.n_kept() == 1);
}

TEST_CASE("select and concat") {
  Rng rng(2);
  auto m = gen::matrix(rng, 4, 3);
  auto cols = select_voxels(m, std::vector<std::size_t>{2, 0});
  CHECK(cols.voxel_ids == std::vector<std::string>{"v002", "v000"});
  CHECK(cols.at(1, 0) == m.at(1, 2));
  auto rows = select_images(m, {"img003", "img001"});
  CHECK(rows.at(0, 1) == m.at(3, 1));
  auto both = concat_images({&rows, &rows});
  CHECK(both.n_images() == 4);
  CHECK_THROWS_AS(select_images(m, {"nope"}), Error);
}

TEST_CASE("matrix container round trip") {
  Rng rng(1);
  auto m = gen::matrix(rng, 2, 3);
  m.provenance = Provenance::Measured;
  m.image_ids[0] = "sim://measured/ünïcode";
  auto path = (std::filesystem::temp_directory_path() / "causeloc_rt.bcrm").string();
  write_matrix(m, path);
  CHECK(read_matrix(path) == m);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_matrix(path), Error);
}

TEST_CASE("matrix container rejects bad input") {
  Rng rng(1);
  auto bytes = encode_matrix(gen::matrix(rng, 1, 3));
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    CHECK(decode_error(b) == ErrorCode::BadMagic);
  }
  SUBCASE("version") {
    auto b = bytes;
    b[4] = 2;
    CHECK(decode_error(b) == ErrorCode::UnsupportedVersion);
  }
  SUBCASE("header declares more rows than the payload holds") {
    auto b = bytes;
    put_u64(b, 12, 10);
    CHECK(decode_error(b) == ErrorCode::Truncated);
  }
  SUBCASE("dimension overflow") {
    auto b = bytes;
    put_u64(b, 12, std::uint64_t{1} << 40);
    CHECK(decode_error(b) == ErrorCode::DimensionOverflow);
  }
  SUBCASE("cut payload") {
    CHECK(decode_error(bytes.substr(0, bytes.size() - 2)) == ErrorCode::Truncated);
    CHECK(decode_error(bytes.substr(0, 3)) == ErrorCode::Truncated);
  }
  SUBCASE("non-finite value") {
    auto b = bytes;
    float nan = std::nanf("");
    std::memcpy(b.data() + b.size() - 4, &nan, 4);
    CHECK(decode_error(b) == ErrorCode::NonFinite);
  }
}

TEST_CASE("embedding index round trip and checks") {
  Rng rng(4);
  auto idx = gen::index(rng, 20, 8);
  idx.check_unit_norm();
  CHECK(decode_index(encode_index(idx)) == idx);
  CHECK(idx.find(idx.ids[3]).data() == idx.row(3).data());
  auto bad = idx;
  bad.vectors[0] += 0.5f;
  CHECK_THROWS_AS(bad.check_unit_norm(), Error);
  CHECK_THROWS_AS(decode_matrix(encode_index(idx)), Error);
}
