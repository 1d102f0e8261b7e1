#include <doctest.h>

#include <fstream>
#include <set>

#include "cdu/data.hpp"
#include "cdu/errors.hpp"
#include "test_util.hpp"

using namespace cdu;

namespace {

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx(const std::filesystem::path& dir, std::uint32_t n, std::uint32_t img_magic = 0x803) {
  std::ofstream im(dir / "images", std::ios::binary);
  write_be32(im, img_magic);
  write_be32(im, n);
  write_be32(im, 28);
  write_be32(im, 28);
  for (std::uint32_t i = 0; i < n * 784; ++i) im.put(static_cast<char>((i * 7) % 256));
  std::ofstream lb(dir / "labels", std::ios::binary);
  write_be32(lb, 0x801);
  write_be32(lb, n);
  for (std::uint32_t i = 0; i < n; ++i) lb.put(static_cast<char>(i % 10));
}

// Nearest class-mean classifier fitted on `fit` rows, scored on `eval` rows.
double nearest_mean_accuracy(const Dataset& d, std::size_t fit_end) {
  const int k = d.num_classes();
  std::vector<std::vector<double>> mu(k, std::vector<double>(d.dim(), 0.0));
  std::vector<int> cnt(k, 0);
  for (std::size_t i = 0; i < fit_end; ++i) {
    ++cnt[d.label(i)];
    for (std::size_t j = 0; j < d.dim(); ++j) mu[d.label(i)][j] += d.row(i)[j];
  }
  for (int c = 0; c < k; ++c)
    for (auto& x : mu[c]) x /= std::max(cnt[c], 1);
  std::size_t ok = 0;
  for (std::size_t i = fit_end; i < d.size(); ++i) {
    int best = 0;
    double bd = 1e300;
    for (int c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < d.dim(); ++j) s += (d.row(i)[j] - mu[c][j]) * (d.row(i)[j] - mu[c][j]);
      if (s < bd) bd = s, best = c;
    }
    ok += best == d.label(i);
  }
  return static_cast<double>(ok) / static_cast<double>(d.size() - fit_end);
}

}  // namespace

TEST_CASE("load_mnist_idx") {
  const auto dir = testutil::temp_dir("idx");
  write_idx(dir, 12);
  const auto d = load_mnist_idx(dir / "images", dir / "labels", 10);
  CHECK(d.size() == 10);
  CHECK(d.dim() == 784);
  CHECK(d.row(0)[1] == doctest::Approx(7.0 / 255.0));
  for (double x : d.features()) CHECK((x >= 0.0 && x <= 1.0));
  CHECK(load_mnist_idx(dir / "images", dir / "labels", 10).content_hash() == d.content_hash());
  CHECK(load_mnist_idx(dir / "images", dir / "labels").size() == 12);
  CHECK_THROWS_AS(load_mnist_idx(dir / "images", dir / "labels", 0), InvalidArgument);
  write_idx(dir, 12, 0x804);
  CHECK_THROWS_AS(load_mnist_idx(dir / "images", dir / "labels"), FormatError);
}

TEST_CASE("csv loading") {
  const auto dir = testutil::temp_dir("csv");
  {
    std::ofstream f(dir / "toy.csv");
    f << "a,b,label\n0.5,1,0\n1.5,2,1\n2.5,3,0\n";
  }
  const auto d = load_csv(dir / "toy.csv", "label");
  CHECK(d.size() == 3);
  CHECK(d.dim() == 2);
  CHECK(d.label(1) == 1);
  CHECK_THROWS_AS(load_csv(dir / "toy.csv", "y"), FormatError);
  {
    std::ofstream f(dir / "ragged.csv");
    f << "a,label\n1,0\n2\n";
  }
  CHECK_THROWS_AS(load_csv(dir / "ragged.csv", "label"), FormatError);
  {
    std::ofstream f(dir / "text.csv");
    f << "a,label\n1,0\nfoo,1\n";
  }
  CHECK_THROWS_AS(load_csv(dir / "text.csv", "label"), FormatError);

  const auto blobs = synth_blobs(50, 3, 3, 2.0, 11);
  write_csv(blobs, dir / "blobs.csv");
  const auto back = load_csv(dir / "blobs.csv", "label");
  CHECK(back.features() == blobs.features());
  CHECK(back.content_hash() == blobs.content_hash());
}

TEST_CASE("synth_blobs") {
  const auto d = synth_blobs(100, 2, 2, 10.0, 4);
  CHECK(d.size() == 100);
  CHECK(synth_blobs(100, 2, 2, 10.0, 4).content_hash() == d.content_hash());
  CHECK(synth_blobs(100, 2, 2, 10.0, 5).content_hash() != d.content_hash());
  int ones = 0;
  for (std::size_t i = 0; i < d.size(); ++i) ones += d.label(i);
  CHECK(ones == 50);
  for (double x : d.features()) CHECK((x >= 0.0 && x <= 1.0));
  CHECK(nearest_mean_accuracy(d, 50) >= 0.99);
  const auto flat = synth_blobs(4000, 3, 2, 0.0, 4);
  CHECK(std::abs(nearest_mean_accuracy(flat, 2000) - 0.5) < 0.05);
  CHECK_THROWS_AS(synth_blobs(100, 0, 2, 1.0, 1), InvalidArgument);
  CHECK_THROWS_AS(synth_blobs(1, 2, 2, 1.0, 1), InvalidArgument);
}

TEST_CASE("make_split") {
  CHECK_THROWS_AS(make_split(10, 10, 1), InvalidArgument);
  CHECK_THROWS_AS(make_split(10, 0, 1), InvalidArgument);
  const auto p = make_split(10, 3, 1);
  CHECK(p.unlearn.size() == 3);
  CHECK(p.retained.size() == 7);
  std::set<std::size_t> all(p.unlearn.begin(), p.unlearn.end());
  for (auto r : p.retained) CHECK(all.insert(r).second);
  CHECK(all.size() == 10);
  CHECK(make_split(10, 3, 1).hash() == p.hash());
  std::vector<int> counts(5, 0);
  for (std::uint64_t seed = 0; seed < 10000; ++seed) ++counts[make_split(5, 1, seed).unlearn[0]];
  for (int c : counts) {
    CHECK(c >= 1800);
    CHECK(c <= 2200);
  }
  CHECK_THROWS_AS(split_from_indices(5, {1, 1}), InvalidArgument);
  CHECK_THROWS_AS(split_from_indices(5, {7}), InvalidArgument);
}

TEST_CASE("hessian_batch_stream") {
  const auto plan = make_split(40, 8, 3);
  SeededRng r1(9, "hess"), r2(9, "hess");
  const auto s1 = hessian_batch_stream(plan, 5, 50, r1);
  const auto s2 = hessian_batch_stream(plan, 5, 50, r2);
  CHECK(s1 == s2);
  std::set<std::size_t> retained(plan.retained.begin(), plan.retained.end());
  for (const auto& b : s1) {
    CHECK(b.size() == 5);
    CHECK(std::set<std::size_t>(b.begin(), b.end()).size() == 5);
    for (auto i : b) CHECK(retained.count(i) == 1);
  }
  SeededRng r3(9, "hess");
  for (const auto& b : hessian_batch_stream(plan, plan.retained.size(), 4, r3)) CHECK(b == plan.retained);
  SeededRng r4(9, "hess");
  CHECK_THROWS_AS(hessian_batch_stream(std::vector<std::size_t>{}, 4, 4, r4), InvalidArgument);
}
