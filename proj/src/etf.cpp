#include "saln/etf.hpp"

#include <cmath>
#include <string>

#include "saln/rng.hpp"

namespace saln {

Tensor EtfPrototypes::prototype(int c) const {
  if (c < 0 || c >= C) fail(ErrCode::UnknownCategory, "prototype index " + std::to_string(c));
  Tensor out = Tensor::zeros({d});
  for (int i = 0; i < d; ++i) out.values[i] = P.at(i, c);
  return out;
}

Tensor EtfPrototypes::gram() const {
  Tensor g = Tensor::zeros({C, C});
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      double s = 0.0;
      for (int i = 0; i < d; ++i) s += P.at(i, a) * P.at(i, b);
      g.values[static_cast<std::size_t>(a) * C + b] = s;
    }
  return g;
}

namespace {

// Orthonormalize the columns of a d x C matrix in place (modified
// Gram-Schmidt, two passes).
void orthonormalize_columns(Tensor& m) {
  const int d = m.rows(), c = m.cols();
  for (int j = 0; j < c; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (int k = 0; k < j; ++k) {
        double proj = 0.0;
        for (int i = 0; i < d; ++i) proj += m.at(i, k) * m.at(i, j);
        for (int i = 0; i < d; ++i) m.values[static_cast<std::size_t>(i) * c + j] -= proj * m.at(i, k);
      }
    }
    double nrm = 0.0;
    for (int i = 0; i < d; ++i) nrm += m.at(i, j) * m.at(i, j);
    nrm = std::sqrt(nrm);
    if (nrm <= 1e-10) fail(ErrCode::ZeroVector, "degenerate column during orthonormalization");
    for (int i = 0; i < d; ++i) m.values[static_cast<std::size_t>(i) * c + j] /= nrm;
  }
}

}  // namespace

EtfPrototypes build_etf(int C, int d, std::uint64_t seed) {
  if (C < 2) fail(ErrCode::DegenerateCategoryCount, "need at least 2 categories");
  if (d < C) fail(ErrCode::DimensionTooSmall, "embedding dimension below category count");

  Rng rng(mix_seed(seed, 0xe7f));
  Tensor u({d, C}, rng.normal_vec(static_cast<std::size_t>(d) * C));
  orthonormalize_columns(u);

  // P = sqrt(C/(C-1)) * U (I - (1/C) 1 1^T): subtract the column average from
  // each column of U, then rescale.
  const double scl = std::sqrt(static_cast<double>(C) / (C - 1));
  Tensor p = Tensor::zeros({d, C});
  for (int i = 0; i < d; ++i) {
    double row_avg = 0.0;
    for (int j = 0; j < C; ++j) row_avg += u.at(i, j);
    row_avg /= C;
    for (int j = 0; j < C; ++j)
      p.values[static_cast<std::size_t>(i) * C + j] = scl * (u.at(i, j) - row_avg);
  }
  return EtfPrototypes{std::move(p), C, d, seed};
}

EtfCheck verify_etf(const EtfPrototypes& p, double tol) {
  const double target = -1.0 / (p.C - 1);
  Tensor g = p.gram();
  EtfCheck out;
  for (int a = 0; a < p.C; ++a)
    for (int b = 0; b < p.C; ++b) {
      const double v = g.at(a, b);
      if (a == b)
        out.max_diag_dev = std::max(out.max_diag_dev, std::abs(v - 1.0));
      else
        out.max_offdiag_dev = std::max(out.max_offdiag_dev, std::abs(v - target));
    }
  out.pass = out.max_diag_dev <= tol && out.max_offdiag_dev <= tol;
  return out;
}

Tensor FeatureSet::global_mean() const {
  int dim = -1, count = 0;
  for (const auto& [c, feats] : groups)
    for (const auto& f : feats) {
      if (dim < 0) dim = f.numel();
      ++count;
    }
  if (count == 0) fail(ErrCode::InsufficientSamples, "empty feature set");
  Tensor mean = Tensor::zeros({dim});
  for (const auto& [c, feats] : groups)
    for (const auto& f : feats)
      for (int i = 0; i < dim; ++i) mean.values[i] += f.at(i);
  for (auto& x : mean.values) x /= count;
  return mean;
}

std::map<int, Tensor> FeatureSet::category_means() const {
  std::map<int, Tensor> out;
  for (const auto& [c, feats] : groups) {
    if (feats.empty()) continue;
    Tensor mean = Tensor::zeros({feats[0].numel()});
    for (const auto& f : feats)
      for (int i = 0; i < mean.numel(); ++i) mean.values[i] += f.at(i);
    for (auto& x : mean.values) x /= static_cast<double>(feats.size());
    out.emplace(c, std::move(mean));
  }
  return out;
}

double lambda_max(const Tensor& sym, std::uint64_t seed) {
  const int n = sym.rows();
  Rng rng(mix_seed(seed, 0x9a3e));
  std::vector<double> v = rng.normal_vec(static_cast<std::size_t>(n));
  double nrm = 0.0;
  for (double x : v) nrm += x * x;
  nrm = std::sqrt(nrm);
  for (auto& x : v) x /= nrm;

  double lambda = 0.0;
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int it = 0; it < 1000; ++it) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += sym.at(i, j) * v[j];
      w[i] = s;
    }
    double wn = 0.0;
    for (double x : w) wn += x * x;
    wn = std::sqrt(wn);
    if (wn <= 1e-300) return 0.0;  // zero matrix (or v in its null space)
    for (int i = 0; i < n; ++i) v[i] = w[i] / wn;
    // Rayleigh quotient of the normalized iterate
    double next = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += sym.at(i, j) * v[j];
      next += v[i] * s;
    }
    if (it > 0 && std::abs(next - lambda) <= 1e-8 * std::max(std::abs(next), 1e-30)) return next;
    lambda = next;
  }
  return lambda;
}

double intra_concentration(const FeatureSet& fs) {
  if (fs.groups.empty()) fail(ErrCode::InsufficientSamples, "empty feature set");
  double eta = 0.0;
  for (const auto& [c, feats] : fs.groups) {
    if (feats.size() < 2)
      fail(ErrCode::InsufficientSamples, "category " + std::to_string(c) + " has fewer than 2 features");
    const int dim = feats[0].numel();
    Tensor mean = Tensor::zeros({dim});
    for (const auto& f : feats)
      for (int i = 0; i < dim; ++i) mean.values[i] += f.at(i);
    for (auto& x : mean.values) x /= static_cast<double>(feats.size());

    Tensor cov = Tensor::zeros({dim, dim});
    for (const auto& f : feats)
      for (int i = 0; i < dim; ++i) {
        const double di = f.at(i) - mean.at(i);
        if (di == 0.0) continue;
        for (int j = 0; j < dim; ++j)
          cov.values[static_cast<std::size_t>(i) * dim + j] += di * (f.at(j) - mean.at(j));
      }
    for (auto& x : cov.values) x /= static_cast<double>(feats.size());
    eta = std::max(eta, lambda_max(cov, static_cast<std::uint64_t>(c)));
  }
  return eta;
}

double micd(const FeatureSet& fs) {
  if (fs.groups.empty()) fail(ErrCode::InsufficientSamples, "empty feature set");
  double total = 0.0;
  int categories = 0;
  for (const auto& [c, feats] : fs.groups) {
    const int n = static_cast<int>(feats.size());
    if (n < 2)
      fail(ErrCode::InsufficientSamples, "category " + std::to_string(c) + " has fewer than 2 features");
    Tape t;
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) acc += 1.0 - cosine_sim(t, feats[i], feats[j]).item();
    // unordered pairs counted once; the ordered-pair average is identical
    total += acc / (n * (n - 1) / 2.0);
    ++categories;
  }
  return total / categories;
}

std::vector<Tensor> center_and_normalize(const std::vector<Tensor>& means, const Tensor& global_mean) {
  std::vector<Tensor> out;
  out.reserve(means.size());
  Tape t;
  for (const auto& m : means) {
    Tensor centered = t.sub(m, global_mean);
    out.push_back(l2_normalize(t, centered));
  }
  return out;
}

EquiangularResult equiangular_deviation(const std::vector<Tensor>& unit_means, const EtfPrototypes& ref) {
  const int n = static_cast<int>(unit_means.size());
  if (n < 2) fail(ErrCode::DegenerateCategoryCount, "need at least 2 category means");
  for (const auto& m : unit_means) {
    double nrm = 0.0;
    for (double x : m.values) nrm += x * x;
    if (std::sqrt(nrm) <= 1e-12) fail(ErrCode::ZeroVector, "degenerate centered mean");
  }
  const double target = 1.0 / (ref.C - 1);
  EquiangularResult out;
  out.per_pair.assign(n, std::vector<double>(n, 0.0));
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      if (a == b) continue;
      double ip = 0.0;
      for (int i = 0; i < unit_means[a].numel(); ++i) ip += unit_means[a].at(i) * unit_means[b].at(i);
      const double eps = ip + target;
      out.per_pair[a][b] = eps;
      out.epsilon = std::max(out.epsilon, std::abs(eps));
    }
  return out;
}

CrossModalResult cross_modal_discrepancy(const std::vector<Tensor>& text_means,
                                         const std::vector<Tensor>& video_means) {
  if (text_means.size() != video_means.size())
    fail(ErrCode::CategoryCountMismatch, "text and video mean counts differ");
  CrossModalResult out;
  Tape t;
  for (std::size_t c = 0; c < text_means.size(); ++c) {
    const double delta = 1.0 - cosine_sim(t, text_means[c], video_means[c]).item();
    out.per_category_delta.push_back(delta);
    out.gamma = std::max(out.gamma, delta);
  }
  return out;
}

}  // namespace saln
