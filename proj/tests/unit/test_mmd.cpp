#include <cmath>
#include <random>

#include "doctest.h"
#include "metadetector/errors.hpp"
#include "metadetector/mmd.hpp"

using namespace metadet;
using mmd::Vec;

namespace {

std::vector<Vec> gaussian_sample(std::size_t n, std::size_t d, double mean,
                                 double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(mean, sd);
  std::vector<Vec> out(n, Vec(d));
  for (auto& v : out) {
    for (auto& x : v) x = g(rng);
  }
  return out;
}

// Written independently of the library: explicit triple loop per kernel.
double naive_mmd2(const std::vector<Vec>& xs, const std::vector<Vec>& ys,
                  const std::vector<double>& sigma2) {
  auto k = [&](const Vec& a, const Vec& b) {
    double s = 0.0;
    for (double s2 : sigma2) {
      double dist = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) dist += (a[i] - b[i]) * (a[i] - b[i]);
      s += std::exp(-dist / (2.0 * s2));
    }
    return s / static_cast<double>(sigma2.size());
  };
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (const auto& a : xs) for (const auto& b : xs) kxx += k(a, b);
  for (const auto& a : ys) for (const auto& b : ys) kyy += k(a, b);
  for (const auto& a : xs) for (const auto& b : ys) kxy += k(a, b);
  const double m = static_cast<double>(xs.size()), n = static_cast<double>(ys.size());
  return kxx / (m * m) + kyy / (n * n) - 2.0 * kxy / (m * n);
}

}  // namespace

TEST_CASE("post representation averages non-PAD embeddings") {
  text::EmbeddingTable t{ad::Tensor({4, 2}, {0, 0, 9, 9, 1, 2, 3, 6}), true};
  const std::int32_t pads[] = {0, 0};
  CHECK(mmd::post_representation(pads, t) == Vec{0, 0});
  const std::int32_t one[] = {2, 0, 0};
  CHECK(mmd::post_representation(one, t) == Vec{1, 2});
  const std::int32_t two[] = {2, 3, 0};
  CHECK(mmd::post_representation(two, t) == Vec{2, 4});
  const std::int32_t bad[] = {4};
  CHECK_THROWS_AS(mmd::post_representation(bad, t), DataError);
}

TEST_CASE("median bandwidth rule") {
  const double a[] = {1, 4, 9};
  CHECK(mmd::median_bandwidths(a).sigma2 ==
        std::vector<double>{0.5, 1, 2, 4, 8, 16, 32});
  const double c[] = {2, 2, 2};
  CHECK(mmd::median_bandwidths(c).sigma2 ==
        std::vector<double>{0.25, 0.5, 1, 2, 4, 8, 16});
  const double z[] = {0, 0};
  CHECK_THROWS_AS(mmd::median_bandwidths(z), DataError);
  // Zero distances are ignored; even counts take the lower median.
  const double mixed[] = {0, 0, 3, 1, 5, 7};
  CHECK(mmd::median_bandwidths(mixed).sigma2[3] == 3.0);

  std::mt19937_64 rng(1);
  std::vector<double> d(25);
  for (auto& v : d) v = std::uniform_real_distribution<double>(0.1, 10)(rng);
  auto bank = mmd::median_bandwidths(d);
  REQUIRE(bank.sigma2.size() == 7);
  for (std::size_t j = 1; j < 7; ++j) {
    CHECK(bank.sigma2[j] > bank.sigma2[j - 1]);
    CHECK(bank.sigma2[j] == 2.0 * bank.sigma2[j - 1]);
  }
}

TEST_CASE("mmd of identical samples is zero") {
  auto xs = gaussian_sample(30, 4, 0, 1, 2);
  auto bank = mmd::median_bandwidths(mmd::pooled_sq_dists(xs, xs));
  CHECK(std::abs(mmd::mmd_squared(xs, xs, bank)) <= 1e-12);
}

TEST_CASE("one-dimensional single-kernel value") {
  const std::vector<Vec> xs = {{0.0}}, ys = {{1.0}};
  mmd::KernelBank bank{{1.0}};
  CHECK(mmd::mmd_squared_unchecked(xs, ys, bank) ==
        doctest::Approx(2.0 - 2.0 * std::exp(-0.5)).epsilon(1e-14));
  CHECK(std::abs(2.0 - 2.0 * std::exp(-0.5) - 0.78694) < 1e-5);
  CHECK_THROWS_AS(mmd::mmd_squared(xs, ys, bank), DataError);
}

TEST_CASE("estimator matches a brute-force double loop") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto xs = gaussian_sample(50, 6, 0.0, 1.0, 10 + seed);
    auto ys = gaussian_sample(50 + seed * 30, 6, 0.3 * seed, 1.5, 20 + seed);
    auto bank = mmd::median_bandwidths(mmd::pooled_sq_dists(xs, ys));
    CHECK(std::abs(mmd::mmd_squared(xs, ys, bank) -
                   naive_mmd2(xs, ys, bank.sigma2)) <= 1e-10);
  }
}

TEST_CASE("symmetry and scale invariance") {
  auto xs = gaussian_sample(40, 5, 0.0, 1.0, 3);
  auto ys = gaussian_sample(60, 5, 0.5, 1.0, 4);
  auto bank = mmd::median_bandwidths(mmd::pooled_sq_dists(xs, ys));
  CHECK(mmd::mmd_squared(xs, ys, bank) == mmd::mmd_squared(ys, xs, bank));

  auto base = mmd::shift_gate(xs, ys, 0.8);
  auto scale = [](std::vector<Vec> v) {
    for (auto& x : v) for (auto& e : x) e *= 2.0;
    return v;
  };
  auto doubled = mmd::shift_gate(scale(xs), scale(ys), 0.8);
  CHECK(std::abs(doubled.d_k - base.d_k) <= 1e-12);
  for (std::size_t j = 0; j < 7; ++j) {
    CHECK(doubled.bandwidths[j] == doctest::Approx(4.0 * base.bandwidths[j]).epsilon(1e-14));
  }
}

TEST_CASE("shift gate threshold and identical corpora") {
  auto xs = gaussian_sample(40, 3, 0.0, 1.0, 5);
  auto same = mmd::shift_gate(xs, xs, 0.8);
  CHECK(same.d_k <= 1e-6);
  CHECK_FALSE(same.gate_open);
  CHECK(same.d_star == 0.8);
  CHECK(same.n_source == 40);

  auto far = gaussian_sample(40, 3, 10.0, 1.0, 6);
  auto r = mmd::shift_gate(xs, far, 0.8);
  CHECK(r.d_k > 0.8);
  CHECK(r.gate_open);
  CHECK(r.gate_open == (r.d_k >= r.d_star));
  // Threshold comparison is inclusive.
  CHECK(mmd::shift_gate(xs, far, r.d_k).gate_open);
  CHECK_FALSE(mmd::shift_gate(xs, far, std::nextafter(r.d_k, 10.0)).gate_open);

  std::vector<Vec> zeros(5, Vec(3, 0.0));
  auto degenerate = mmd::shift_gate(zeros, zeros, 0.8);
  CHECK(degenerate.d_k == 0.0);
  CHECK_FALSE(degenerate.gate_open);
}

TEST_CASE("shift gate over corpora is deterministic") {
  text::EventCorpus a, b;
  a.event_id = "a";
  b.event_id = "b";
  for (int i = 0; i < 20; ++i) {
    a.posts.push_back({"a" + std::to_string(i), "x y z" + std::to_string(i % 3),
                       text::Label::kFake, "a"});
    b.posts.push_back({"b" + std::to_string(i), "p q z" + std::to_string(i % 5),
                       std::nullopt, "b"});
  }
  const text::EventCorpus* cs[] = {&a, &b};
  auto vocab = text::build_vocab(cs, 1);
  std::mt19937_64 rng(7);
  auto table = text::random_embedding_table(vocab.size(), 8, rng);
  auto r1 = mmd::shift_gate(a, b, vocab, 4, table);
  auto r2 = mmd::shift_gate(a, b, vocab, 4, table);
  CHECK(r1.d_k == r2.d_k);
  CHECK(r1.d_star == mmd::kDefaultDStar);
  auto self = mmd::shift_gate(a, a, vocab, 4, table);
  CHECK(self.d_k <= 1e-6);
}
