#pragma once

#include <span>
#include <vector>

#include "metadetector/text.hpp"

namespace metadet::mmd {

using Vec = std::vector<double>;

// Squared bandwidths σ²_j of a Gaussian kernel bank. The bank's kernel is
// the mean of exp(−‖x−y‖² / (2σ²_j)) over j.
struct KernelBank {
  std::vector<double> sigma2;

  double operator()(std::span<const double> x, std::span<const double> y) const;
  // Same kernel from a precomputed squared distance.
  double from_sq_dist(double sq_dist) const;
};

struct ShiftReport {
  double d_k = 0.0;
  double d_star = 0.8;
  bool gate_open = false;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::vector<double> bandwidths;
};

inline constexpr double kDefaultDStar = 0.8;
inline constexpr std::size_t kDefaultKernels = 7;

// Mean of the non-PAD token embeddings; zero vector for an empty post.
Vec post_representation(std::span<const std::int32_t> ids,
                        const text::EmbeddingTable& table);

// base = median of the strictly positive squared distances;
// bank = {base·2^(j−n/2)}. For 7 kernels: factors 2^−3 .. 2^3.
KernelBank median_bandwidths(std::span<const double> pairwise_sq_dists,
                             std::size_t n_kernels = kDefaultKernels);

// All pairwise squared distances within the pooled sample (i < j).
std::vector<double> pooled_sq_dists(std::span<const Vec> xs,
                                    std::span<const Vec> ys);

// Biased (V-statistic) estimate of MMD²: mean K(x,x') + mean K(y,y') −
// 2 mean K(x,y). Exactly symmetric in its two arguments.
double mmd_squared(std::span<const Vec> xs, std::span<const Vec> ys,
                   const KernelBank& bank);
// Variant without the two-sample minimum, for unit-scale checks.
double mmd_squared_unchecked(std::span<const Vec> xs, std::span<const Vec> ys,
                             const KernelBank& bank);

// d_k over post representations, median-heuristic bank, threshold d_star.
ShiftReport shift_gate(std::span<const Vec> source_reps,
                       std::span<const Vec> target_reps, double d_star,
                       std::size_t n_kernels = kDefaultKernels);

ShiftReport shift_gate(const text::EventCorpus& source,
                       const text::EventCorpus& target,
                       const text::Vocabulary& vocab, std::size_t k,
                       const text::EmbeddingTable& table,
                       double d_star = kDefaultDStar);

}  // namespace metadet::mmd
