#include "metadetector/mmd.hpp"

#include <algorithm>
#include <cmath>

#include "metadetector/errors.hpp"

namespace metadet::mmd {

namespace {

double sq_dist(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = x[i] - y[i];
    s += t * t;
  }
  return s;
}

// Σ_{i,i'} K(x_i, x_i') using K(x,x) = 1 and symmetry.
double within_sum(std::span<const Vec> xs, const KernelBank& bank) {
  double off = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      off += bank.from_sq_dist(sq_dist(xs[i], xs[j]));
    }
  }
  return static_cast<double>(xs.size()) + 2.0 * off;
}

double cross_sum(std::span<const Vec> xs, std::span<const Vec> ys,
                 const KernelBank& bank) {
  double s = 0.0;
  for (const Vec& x : xs) {
    for (const Vec& y : ys) s += bank.from_sq_dist(sq_dist(x, y));
  }
  return s;
}

void check_dims(std::span<const Vec> xs, std::span<const Vec> ys) {
  const std::size_t d = !xs.empty() ? xs[0].size() : ys[0].size();
  for (auto set : {xs, ys}) {
    for (const Vec& v : set) {
      if (v.size() != d) {
        throw DimensionError("mmd: representations of differing dimension " +
                             std::to_string(v.size()) + " vs " +
                             std::to_string(d));
      }
    }
  }
}

bool lex_less(std::span<const Vec> a, std::span<const Vec> b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

double KernelBank::from_sq_dist(double d2) const {
  double s = 0.0;
  for (double s2 : sigma2) s += std::exp(-d2 / (2.0 * s2));
  return s / static_cast<double>(sigma2.size());
}

double KernelBank::operator()(std::span<const double> x,
                              std::span<const double> y) const {
  return from_sq_dist(sq_dist(x, y));
}

Vec post_representation(std::span<const std::int32_t> ids,
                        const text::EmbeddingTable& table) {
  const std::size_t d = table.dim();
  Vec rep(d, 0.0);
  std::size_t n = 0;
  for (std::int32_t id : ids) {
    if (id == text::Vocabulary::kPad) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= table.vocab_size()) {
      throw DataError("token id " + std::to_string(id) +
                      " outside embedding table");
    }
    const double* row = table.matrix.values().data() + id * d;
    for (std::size_t i = 0; i < d; ++i) rep[i] += row[i];
    ++n;
  }
  if (n > 0) {
    for (double& v : rep) v /= static_cast<double>(n);
  }
  return rep;
}

KernelBank median_bandwidths(std::span<const double> pairwise_sq_dists,
                             std::size_t n_kernels) {
  if (n_kernels == 0) throw ConfigError("kernel bank needs at least 1 kernel");
  std::vector<double> pos;
  pos.reserve(pairwise_sq_dists.size());
  for (double v : pairwise_sq_dists) {
    if (v > 0.0) pos.push_back(v);
  }
  if (pos.empty()) {
    throw DataError("degenerate data: every pairwise distance is zero");
  }
  // Lower median for even counts keeps the base an observed distance.
  auto mid = pos.begin() + (pos.size() - 1) / 2;
  std::nth_element(pos.begin(), mid, pos.end());
  const double base = *mid;
  KernelBank bank;
  const int centre = static_cast<int>(n_kernels / 2);
  for (std::size_t j = 0; j < n_kernels; ++j) {
    bank.sigma2.push_back(base *
                          std::ldexp(1.0, static_cast<int>(j) - centre));
  }
  return bank;
}

std::vector<double> pooled_sq_dists(std::span<const Vec> xs,
                                    std::span<const Vec> ys) {
  std::vector<const Vec*> all;
  for (const Vec& v : xs) all.push_back(&v);
  for (const Vec& v : ys) all.push_back(&v);
  std::vector<double> out;
  out.reserve(all.size() * (all.size() - 1) / 2);
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      out.push_back(sq_dist(*all[i], *all[j]));
    }
  }
  return out;
}

double mmd_squared_unchecked(std::span<const Vec> xs, std::span<const Vec> ys,
                             const KernelBank& bank) {
  if (xs.empty() || ys.empty()) {
    throw DataError("mmd: both samples must be non-empty");
  }
  if (bank.sigma2.empty()) throw ConfigError("mmd: empty kernel bank");
  check_dims(xs, ys);
  // Canonical argument order makes the estimate exactly symmetric.
  if (lex_less(ys, xs)) std::swap(xs, ys);
  const double n = static_cast<double>(xs.size());
  const double m = static_cast<double>(ys.size());
  const double kxx = within_sum(xs, bank) / (n * n);
  const double kyy = within_sum(ys, bank) / (m * m);
  const double kxy = cross_sum(xs, ys, bank) / (n * m);
  return (kxx + kyy) - 2.0 * kxy;
}

double mmd_squared(std::span<const Vec> xs, std::span<const Vec> ys,
                   const KernelBank& bank) {
  if (xs.size() < 2 || ys.size() < 2) {
    throw DataError("mmd: need at least 2 samples per side, got " +
                    std::to_string(xs.size()) + " and " +
                    std::to_string(ys.size()));
  }
  return mmd_squared_unchecked(xs, ys, bank);
}

ShiftReport shift_gate(std::span<const Vec> source_reps,
                       std::span<const Vec> target_reps, double d_star,
                       std::size_t n_kernels) {
  if (source_reps.empty() || target_reps.empty()) {
    throw DataError("shift_gate: both corpora must be non-empty");
  }
  const auto dists = pooled_sq_dists(source_reps, target_reps);
  ShiftReport r;
  r.d_star = d_star;
  r.n_source = source_reps.size();
  r.n_target = target_reps.size();
  bool degenerate = true;
  for (double v : dists) degenerate = degenerate && v == 0.0;
  if (degenerate) {
    // Every representation coincides: the two samples are identical.
    r.d_k = 0.0;
    r.gate_open = r.d_k >= d_star;
    return r;
  }
  const KernelBank bank = median_bandwidths(dists, n_kernels);
  r.bandwidths = bank.sigma2;
  const double m2 = mmd_squared(source_reps, target_reps, bank);
  r.d_k = std::sqrt(std::max(0.0, m2));
  r.gate_open = r.d_k >= d_star;
  return r;
}

ShiftReport shift_gate(const text::EventCorpus& source,
                       const text::EventCorpus& target,
                       const text::Vocabulary& vocab, std::size_t k,
                       const text::EmbeddingTable& table, double d_star) {
  source.validate();
  target.validate();
  auto reps = [&](const text::EventCorpus& c) {
    std::vector<Vec> out;
    out.reserve(c.size());
    for (const text::Post& p : c.posts) {
      out.push_back(post_representation(text::encode(p, vocab, k), table));
    }
    return out;
  };
  const auto xs = reps(source);
  const auto ys = reps(target);
  return shift_gate(xs, ys, d_star);
}

}  // namespace metadet::mmd
