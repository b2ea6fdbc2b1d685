#ifndef SALN_ETF_HPP
#define SALN_ETF_HPP

#include <cstdint>
#include <map>
#include <vector>

#include "saln/tensor.hpp"

namespace saln {

// Fixed simplex-ETF prototype matrix: d x C, unit columns with pairwise
// inner products -1/(C-1). Frozen after construction.
struct EtfPrototypes {
  Tensor P;  // d x C
  int C = 0;
  int d = 0;
  std::uint64_t seed = 0;

  Tensor prototype(int c) const;  // column c as a d-vector
  Tensor gram() const;            // P^T P
};

// P* = sqrt(C/(C-1)) * U (I_C - (1/C) 1 1^T), U a seeded d x C orthonormal
// frame (modified Gram-Schmidt with re-orthogonalization).
EtfPrototypes build_etf(int C, int d, std::uint64_t seed);

struct EtfCheck {
  bool pass = false;
  double max_diag_dev = 0.0;
  double max_offdiag_dev = 0.0;
};
EtfCheck verify_etf(const EtfPrototypes& p, double tol);

// Feature vectors grouped by category id.
struct FeatureSet {
  std::map<int, std::vector<Tensor>> groups;

  void add(int category, Tensor v) { groups[category].push_back(std::move(v)); }
  // average over all features of all categories
  Tensor global_mean() const;
  // per-category (unnormalized) means, keyed by category
  std::map<int, Tensor> category_means() const;
};

// P1: max over categories of the top eigenvalue of the within-category
// covariance (power iteration, relative tolerance 1e-8, 1000 iterations).
double intra_concentration(const FeatureSet& fs);

// Mean intra-category dispersion: averaged pairwise (1 - cosine) within each
// category, averaged over categories.
double micd(const FeatureSet& fs);

// Helper for P2: subtract the global mean and l2-normalize each mean.
std::vector<Tensor> center_and_normalize(const std::vector<Tensor>& means, const Tensor& global_mean);

struct EquiangularResult {
  double epsilon = 0.0;                          // max |eps_{c,c'}|
  std::vector<std::vector<double>> per_pair;     // eps_{c,c'} (diagonal zero)
};
// P2 deviation of already centered+normalized means from the -1/(C-1)
// structure of the reference ETF.
EquiangularResult equiangular_deviation(const std::vector<Tensor>& unit_means, const EtfPrototypes& ref);

struct CrossModalResult {
  double gamma = 0.0;
  std::vector<double> per_category_delta;  // delta_c = 1 - <mu_t, mu_v>
};
// P3 cross-modal discrepancy between per-category unit means.
CrossModalResult cross_modal_discrepancy(const std::vector<Tensor>& text_means,
                                         const std::vector<Tensor>& video_means);

struct GeometryReport {
  double eta = 0.0;
  double epsilon = 0.0;
  double gamma = 0.0;
  double micd = 0.0;
  std::vector<double> per_category_delta;
};

// exposed for testing: largest eigenvalue of a symmetric PSD matrix
double lambda_max(const Tensor& sym, std::uint64_t seed = 0);

}  // namespace saln

#endif
