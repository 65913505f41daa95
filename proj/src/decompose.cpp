#include "vardecomp/decompose.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vardecomp/error.hpp"
#include "vardecomp/numeric.hpp"

namespace vardecomp {

void FittedModels::check() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::DimensionMismatch, what); };
  if (J < 2 || K < 2 || p < 0) fail("need J >= 2, K >= 2, p >= 0");
  const OutcomeLayout layout{J, K, p};
  if (outcome.theta.size() != layout.length()) {
    fail("outcome model has " + std::to_string(outcome.theta.size()) + " coefficients, expected " +
         std::to_string(layout.length()));
  }
  if (hospital.coef.rows() != J - 1 || hospital.coef.cols() != hospital_feature_length(p, K)) {
    fail("hospital model coefficients are " + std::to_string(hospital.coef.rows()) + "x" +
         std::to_string(hospital.coef.cols()) + ", expected " + std::to_string(J - 1) + "x" +
         std::to_string(hospital_feature_length(p, K)));
  }
  if (group.coef.rows() != K - 1 || group.coef.cols() != 1 + p) {
    fail("group model coefficients are " + std::to_string(group.coef.rows()) + "x" +
         std::to_string(group.coef.cols()) + ", expected " + std::to_string(K - 1) + "x" + std::to_string(1 + p));
  }
}

FittedModels fit_models(const Dataset& data, const PipelineConfig& config) {
  FittedModels m;
  m.outcome_kind = data.outcome_kind;
  m.J = data.J();
  m.K = data.K();
  m.p = data.p();
  m.outcome = fit_glm(data, link_for(data.outcome_kind), config.outcome);
  m.hospital = fit_hospital_model(data, config.hospital);
  m.group = fit_group_model(data, config.group);
  return m;
}

GlmFit make_glm(Eigen::VectorXd theta, Link link, double residual_sd) {
  GlmFit f;
  const auto q = theta.size();
  f.theta = std::move(theta);
  f.vcov = Eigen::MatrixXd::Zero(q, q);
  f.link = link;
  f.converged = true;
  f.residual_sd = residual_sd;
  return f;
}

MultinomialFit make_multinomial(Eigen::MatrixXd coef) {
  MultinomialFit f;
  const auto dim = coef.rows() * coef.cols();
  f.levels = static_cast<int>(coef.rows()) + 1;
  f.coef = std::move(coef);
  f.vcov = Eigen::MatrixXd::Zero(dim, dim);
  f.converged = true;
  return f;
}

double Components::sum() const noexcept {
  CompensatedSum s;
  for (double v : w) s += v;
  return s.value();
}

std::array<double, kComponents + 1> Components::values() const noexcept {
  std::array<double, kComponents + 1> out{};
  std::copy(w.begin(), w.end(), out.begin());
  out[kComponents] = total;
  return out;
}

void to_json(nlohmann::json& j, const Components& c) {
  nlohmann::json comp = nlohmann::json::object();
  nlohmann::json prop = nlohmann::json::object();
  const auto vals = c.values();
  for (std::size_t k = 0; k < vals.size(); ++k) {
    comp[kComponentNames[k]] = vals[k];
    prop[kComponentNames[k]] = vals[k] / c.total;
  }
  j = nlohmann::json{{"n_used", c.n_used}, {"components", comp}, {"proportions", prop}};
  if (std::isnan(c.sample_variance_y)) {
    j["sample_variance_y"] = nullptr;
  } else {
    j["sample_variance_y"] = c.sample_variance_y;
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& [a, z] : c.empty_cells) cells.push_back({a, z});
  j["empty_cells"] = cells;
}

// ---------------------------------------------------------------------------
// Cell table

CellTable::Layout::Layout(int J_, int K_) : J(J_), K(K_) {
  const auto jk = static_cast<std::size_t>(J) * static_cast<std::size_t>(K);
  const auto k = static_cast<std::size_t>(K);
  std::size_t off = 0;
  m = off, off += jk;
  v = off, off += jk;
  pa = off, off += jk;
  pz = off, off += k;
  mu = off, off += k * k;
  mudot = off, off += k;
  muall = off, off += 1;
  tau = off, off += jk;
  ind = off, off += k;
  dir = off, off += k;
  stride = off;
}

CellTable::CellTable(std::size_t rows, int J, int K)
    : rows_(rows), layout_(J, K), data_(rows * layout_.stride, 0.0) {}

namespace {

// Structured evaluation of the three models for one covariate row. The
// outcome linear predictor is split into a shared covariate part plus
// hospital, group and interaction offsets.
class RowKernel {
 public:
  RowKernel(const FittedModels& models)
      : M_(models), layout_{models.J, models.K, models.p}, cl_(models.J, models.K) {
    models.check();
    feat_.resize(static_cast<std::size_t>(hospital_feature_length(models.p, models.K)));
    eta_.resize(static_cast<std::size_t>(std::max(models.J, models.K)));
    probs_.resize(eta_.size());
  }

  const CellTable::Layout& layout() const noexcept { return cl_; }

  void fill(std::span<const double> x, double* rec) {
    const int J = M_.J, K = M_.K, p = M_.p;
    const auto& th = M_.outcome.theta;
    double* m = rec + cl_.m;
    double* v = rec + cl_.v;
    double* pa = rec + cl_.pa;
    double* pz = rec + cl_.pz;

    // group membership
    for (int l = 0; l < K - 1; ++l) {
      double e = M_.group.coef(l, 0);
      for (int j = 0; j < p; ++j) e += M_.group.coef(l, 1 + j) * x[static_cast<std::size_t>(j)];
      eta_[static_cast<std::size_t>(l)] = e;
    }
    softmax_with_reference({eta_.data(), static_cast<std::size_t>(K - 1)}, {pz, static_cast<std::size_t>(K)});

    // hospital assignment under each z
    for (int z = 1; z <= K; ++z) {
      fill_hospital_features(x, K, z, feat_);
      for (int l = 0; l < J - 1; ++l) {
        double e = 0.0;
        for (std::size_t f = 0; f < feat_.size(); ++f) e += M_.hospital.coef(l, static_cast<Eigen::Index>(f)) * feat_[f];
        eta_[static_cast<std::size_t>(l)] = e;
      }
      softmax_with_reference({eta_.data(), static_cast<std::size_t>(J - 1)}, {probs_.data(), static_cast<std::size_t>(J)});
      for (int a = 1; a <= J; ++a) pa[(a - 1) * K + (z - 1)] = probs_[static_cast<std::size_t>(a - 1)];
    }

    // outcome mean and variance
    double base = th(0);
    for (int j = 0; j < p; ++j) base += th(layout_.covariate(j)) * x[static_cast<std::size_t>(j)];
    const double sigma2 = M_.outcome.residual_sd * M_.outcome.residual_sd;
    const bool binary = M_.outcome_kind == OutcomeKind::Binary;
    for (int a = 1; a <= J; ++a) {
      for (int z = 1; z <= K; ++z) {
        double e = base;
        if (a > 1) e += th(layout_.hospital(a));
        if (z > 1) e += th(layout_.group(z));
        if (a > 1 && z > 1) e += th(layout_.interaction(a, z));
        const double mean = inverse_link(M_.outcome.link, e);
        m[(a - 1) * K + (z - 1)] = mean;
        v[(a - 1) * K + (z - 1)] = binary ? mean * (1.0 - mean) : sigma2;
      }
    }
    derive(rec);
  }

  // mu, tau and the two path effects from m, pA, pZ.
  void derive(double* rec) const {
    const int J = cl_.J, K = cl_.K;
    const double* m = rec + cl_.m;
    const double* pa = rec + cl_.pa;
    const double* pz = rec + cl_.pz;
    double* mu = rec + cl_.mu;
    double* mudot = rec + cl_.mudot;
    double* tau = rec + cl_.tau;

    for (int z = 0; z < K; ++z) {
      for (int zs = 0; zs < K; ++zs) {
        double s = 0.0;
        for (int a = 0; a < J; ++a) s += m[a * K + z] * pa[a * K + zs];
        mu[z * K + zs] = s;
      }
    }
    double all = 0.0;
    for (int z = 0; z < K; ++z) {
      double s = 0.0;
      for (int zs = 0; zs < K; ++zs) s += mu[z * K + zs] * pz[zs];
      mudot[z] = s;
      all += mu[z * K + z] * pz[z];
    }
    rec[cl_.muall] = all;
    for (int z = 0; z < K; ++z) {
      rec[cl_.ind + static_cast<std::size_t>(z)] = mu[z * K + z] - mudot[z];
      rec[cl_.dir + static_cast<std::size_t>(z)] = mudot[z] - all;
      for (int a = 0; a < J; ++a) tau[a * K + z] = m[a * K + z] - mu[z * K + z];
    }
  }

  struct Terms {
    std::array<double, kComponents> w{};  // slot 6 (case-mix) unused per row
    double muall = 0.0;
    double within = 0.0;
    double group_part = 0.0;
    double hospital_part = 0.0;
  };

  Terms terms(const double* rec) {
    const int J = cl_.J, K = cl_.K;
    const double* m = rec + cl_.m;
    const double* v = rec + cl_.v;
    const double* pa = rec + cl_.pa;
    const double* pz = rec + cl_.pz;
    const double* tau = rec + cl_.tau;
    const double* ind = rec + cl_.ind;
    const double* dir = rec + cl_.dir;
    const double all = rec[cl_.muall];

    Terms t;
    t.muall = all;
    for (int z = 0; z < K; ++z) {
      t.w[0] += ind[z] * ind[z] * pz[z];
      t.w[1] += dir[z] * dir[z] * pz[z];
      t.w[2] += 2.0 * ind[z] * dir[z] * pz[z];
      const double dz = rec[cl_.mu + static_cast<std::size_t>(z * K + z)] - all;
      t.group_part += pz[z] * dz * dz;
    }
    for (int a = 0; a < J; ++a) {
      double pb = 0.0, tb = 0.0, t2 = 0.0, t2p = 0.0;
      for (int z = 0; z < K; ++z) {
        const double tz = tau[a * K + z];
        pb += pa[a * K + z] * pz[z];
        tb += tz * pz[z];
        t2 += tz * tz * pz[z];
        t2p += tz * tz * pa[a * K + z] * pz[z];
      }
      double vz = 0.0;
      for (int z = 0; z < K; ++z) {
        const double d = tau[a * K + z] - tb;
        vz += d * d * pz[z];
      }
      t.w[3] += tb * tb * pb;
      t.w[4] += vz * pb;
      t.w[5] += t2p - t2 * pb;
      t.hospital_part += t2p;
    }
    for (int z = 0; z < K; ++z) {
      double r = 0.0, wz = 0.0;
      for (int a = 0; a < J; ++a) {
        const double d = m[a * K + z] - all;
        r += v[a * K + z] * pa[a * K + z];
        wz += (d * d + v[a * K + z]) * pa[a * K + z];
      }
      t.w[7] += r * pz[z];
      t.within += wz * pz[z];
    }
    return t;
  }

 private:
  const FittedModels& M_;
  OutcomeLayout layout_;
  CellTable::Layout cl_;
  std::vector<double> feat_, eta_, probs_;
};

template <class F>
double mean_over_rows(const CellTable& cells, F&& f) {
  CompensatedSum s;
  for (std::size_t i = 0; i < cells.rows(); ++i) s += f(i);
  return cells.rows() > 0 ? s.value() / static_cast<double>(cells.rows()) : 0.0;
}

// Per-row term k of the kernel, evaluated from a stored record.
double row_term(const CellTable& cells, std::size_t i, std::size_t k) {
  const int J = cells.J(), K = cells.K();
  double out = 0.0;
  switch (k) {
    case 0:
      for (int z = 1; z <= K; ++z) out += cells.delta_ind(i, z) * cells.delta_ind(i, z) * cells.pZ(i, z);
      break;
    case 1:
      for (int z = 1; z <= K; ++z) out += cells.delta_dir(i, z) * cells.delta_dir(i, z) * cells.pZ(i, z);
      break;
    case 2:
      for (int z = 1; z <= K; ++z) out += 2.0 * cells.delta_ind(i, z) * cells.delta_dir(i, z) * cells.pZ(i, z);
      break;
    case 3:
    case 4:
    case 5:
      for (int a = 1; a <= J; ++a) {
        double pb = 0.0, tb = 0.0, t2 = 0.0, t2p = 0.0;
        for (int z = 1; z <= K; ++z) {
          const double t = cells.tau(i, a, z);
          pb += cells.pA(i, a, z) * cells.pZ(i, z);
          tb += t * cells.pZ(i, z);
          t2 += t * t * cells.pZ(i, z);
          t2p += t * t * cells.pA(i, a, z) * cells.pZ(i, z);
        }
        if (k == 3) {
          out += tb * tb * pb;
        } else if (k == 4) {
          double vz = 0.0;
          for (int z = 1; z <= K; ++z) vz += (cells.tau(i, a, z) - tb) * (cells.tau(i, a, z) - tb) * cells.pZ(i, z);
          out += vz * pb;
        } else {
          out += t2p - t2 * pb;
        }
      }
      break;
    case 7:
      for (int z = 1; z <= K; ++z) {
        double r = 0.0;
        for (int a = 1; a <= J; ++a) r += cells.v(i, a, z) * cells.pA(i, a, z);
        out += r * cells.pZ(i, z);
      }
      break;
    default:
      break;
  }
  return out;
}

constexpr std::size_t kBlock = 256;

}  // namespace

CellTable build_cells(const RowMatrix& x, const FittedModels& models) {
  if (x.cols() != models.p) {
    throw Error(ErrorKind::DimensionMismatch, "covariate matrix has " + std::to_string(x.cols()) +
                                                  " columns, models expect " + std::to_string(models.p));
  }
  const auto n = static_cast<std::size_t>(x.rows());
  CellTable cells(n, models.J, models.K);
  const auto p = static_cast<std::size_t>(x.cols());
  const auto nblocks = static_cast<std::ptrdiff_t>((n + kBlock - 1) / kBlock);
  models.check();
#pragma omp parallel
  {
    RowKernel kernel(models);
#pragma omp for schedule(static)
    for (std::ptrdiff_t b = 0; b < nblocks; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
      const std::size_t hi = std::min(n, lo + kBlock);
      for (std::size_t i = lo; i < hi; ++i) kernel.fill({x.data() + i * p, p}, cells.record(i).data());
    }
  }
  return cells;
}

CellTable build_cells(const Dataset& data, const FittedModels& models) {
  if (data.J() != models.J || data.K() != models.K || data.p() != models.p) {
    throw Error(ErrorKind::DimensionMismatch, "dataset dimensions (J, K, p) = (" + std::to_string(data.J()) + ", " +
                                                  std::to_string(data.K()) + ", " + std::to_string(data.p()) +
                                                  ") do not match the models");
  }
  return build_cells(data.x, models);
}

double component_group_indirect(const CellTable& c) {
  return mean_over_rows(c, [&](std::size_t i) { return row_term(c, i, 0); });
}
double component_group_direct(const CellTable& c) {
  return mean_over_rows(c, [&](std::size_t i) { return row_term(c, i, 1); });
}
double component_group_covariance(const CellTable& c) {
  return mean_over_rows(c, [&](std::size_t i) { return row_term(c, i, 2); });
}
double component_main_hospital(const CellTable& c) {
  return mean_over_rows(c, [&](std::size_t i) { return row_term(c, i, 3); });
}
double component_effect_modification(const CellTable& c) {
  return mean_over_rows(c, [&](std::size_t i) { return row_term(c, i, 4); });
}
double component_differential_selection(const CellTable& c) {
  return mean_over_rows(c, [&](std::size_t i) { return row_term(c, i, 5); });
}
double component_case_mix(const CellTable& c) {
  std::vector<double> mu(c.rows());
  for (std::size_t i = 0; i < c.rows(); ++i) mu[i] = c.mu_all(i);
  return c.rows() > 1 ? sample_variance(mu) : 0.0;
}
double component_residual(const CellTable& c) {
  return mean_over_rows(c, [&](std::size_t i) { return row_term(c, i, 7); });
}

RowTerms row_terms(const CellTable& cells, std::size_t i) {
  RowTerms t;
  for (std::size_t k = 0; k < kComponents; ++k) t.w[k] = row_term(cells, i, k);
  const double all = cells.mu_all(i);
  t.w[6] = all;
  for (int z = 1; z <= cells.K(); ++z) {
    double wz = 0.0;
    for (int a = 1; a <= cells.J(); ++a) {
      const double d = cells.m(i, a, z) - all;
      wz += (d * d + cells.v(i, a, z)) * cells.pA(i, a, z);
    }
    t.within += wz * cells.pZ(i, z);
  }
  return t;
}

std::pair<double, double> mean_path_effects(const CellTable& cells, std::size_t i) {
  double ind = 0.0, dir = 0.0;
  for (int z = 1; z <= cells.K(); ++z) {
    ind += cells.delta_ind(i, z) * cells.pZ(i, z);
    dir += cells.delta_dir(i, z) * cells.pZ(i, z);
  }
  return {ind, dir};
}

Components decompose(const RowMatrix& x, const FittedModels& models) {
  if (x.cols() != models.p) {
    throw Error(ErrorKind::DimensionMismatch, "covariate matrix has " + std::to_string(x.cols()) +
                                                  " columns, models expect " + std::to_string(models.p));
  }
  models.check();
  const auto n = static_cast<std::size_t>(x.rows());
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "no rows to decompose");
  const auto p = static_cast<std::size_t>(x.cols());
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;

  // slots: w1..w6, w8, within, group_part, hospital_part
  constexpr std::size_t kSlots = 10;
  std::vector<std::array<double, kSlots>> partial(nblocks);
  std::vector<double> muall(n);

#pragma omp parallel
  {
    RowKernel kernel(models);
    std::vector<double> rec(kernel.layout().stride);
#pragma omp for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nblocks); ++b) {
      std::array<CompensatedSum, kSlots> acc;
      const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
      const std::size_t hi = std::min(n, lo + kBlock);
      for (std::size_t i = lo; i < hi; ++i) {
        kernel.fill({x.data() + i * p, p}, rec.data());
        const auto t = kernel.terms(rec.data());
        for (std::size_t k = 0; k < 6; ++k) acc[k] += t.w[k];
        acc[6] += t.w[7];
        acc[7] += t.within;
        acc[8] += t.group_part;
        acc[9] += t.hospital_part;
        muall[i] = t.muall;
      }
      for (std::size_t k = 0; k < kSlots; ++k) partial[static_cast<std::size_t>(b)][k] = acc[k].value();
    }
  }

  std::array<CompensatedSum, kSlots> tot;
  for (const auto& blk : partial) {
    for (std::size_t k = 0; k < kSlots; ++k) tot[k] += blk[k];
  }
  const double dn = static_cast<double>(n);
  Components c;
  c.n_used = n;
  for (std::size_t k = 0; k < 6; ++k) c.w[k] = tot[k].value() / dn;
  c.w[6] = n > 1 ? sample_variance(muall) : 0.0;
  c.w[7] = tot[6].value() / dn;
  c.total = c.w[6] + tot[7].value() / dn;
  c.group_part = tot[8].value() / dn;
  c.hospital_part = tot[9].value() / dn;
  return c;
}

Components decompose(const Dataset& data, const FittedModels& models) {
  if (data.J() != models.J || data.K() != models.K || data.p() != models.p) {
    throw Error(ErrorKind::DimensionMismatch, "dataset dimensions (J, K, p) = (" + std::to_string(data.J()) + ", " +
                                                  std::to_string(data.K()) + ", " + std::to_string(data.p()) +
                                                  ") do not match the models");
  }
  Components c = decompose(data.x, models);
  if (data.n() > 1) c.sample_variance_y = sample_variance(data.y);
  std::vector<char> seen(static_cast<std::size_t>(data.J() * data.K()), 0);
  for (std::size_t i = 0; i < data.n(); ++i) seen[static_cast<std::size_t>((data.a[i] - 1) * data.K() + data.z[i] - 1)] = 1;
  for (int a = 1; a <= data.J(); ++a) {
    for (int z = 1; z <= data.K(); ++z) {
      if (!seen[static_cast<std::size_t>((a - 1) * data.K() + z - 1)]) c.empty_cells.emplace_back(a, z);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

namespace reference {

Components decompose(const RowMatrix& x, const FittedModels& models) {
  models.check();
  if (x.cols() != models.p) throw Error(ErrorKind::DimensionMismatch, "covariate column count");
  const int J = models.J, K = models.K;
  const auto n = static_cast<std::size_t>(x.rows());
  const auto p = static_cast<std::size_t>(x.cols());
  const OutcomeLayout layout{J, K, models.p};

  Eigen::MatrixXd m(J, K), v(J, K), pa(J, K);
  Eigen::VectorXd drow(layout.length());
  std::vector<double> feat(static_cast<std::size_t>(hospital_feature_length(models.p, K)));
  std::vector<double> gfeat(p + 1);
  std::vector<double> mu_all(n);
  std::array<CompensatedSum, kComponents> acc;
  CompensatedSum within, gpart, hpart;

  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> xi(x.data() + i * p, p);
    gfeat[0] = 1.0;
    std::copy(xi.begin(), xi.end(), gfeat.begin() + 1);
    const Eigen::VectorXd pz = predict_probs(models.group, gfeat);
    for (int z = 1; z <= K; ++z) {
      fill_hospital_features(xi, K, z, feat);
      const Eigen::VectorXd pr = predict_probs(models.hospital, feat);
      for (int a = 1; a <= J; ++a) {
        fill_design_row(xi, layout, a, z, {drow.data(), static_cast<std::size_t>(drow.size())});
        const std::span<const double> d(drow.data(), static_cast<std::size_t>(drow.size()));
        m(a - 1, z - 1) = predict_mean(models.outcome, d);
        v(a - 1, z - 1) = conditional_variance(models.outcome, d, models.outcome_kind);
        pa(a - 1, z - 1) = pr(a - 1);
      }
    }

    // mu(z, z*) = sum_a m(a, z) pA(a, z*)
    const Eigen::MatrixXd mu = m.transpose() * pa;
    const Eigen::VectorXd mu_z = mu.diagonal();
    const Eigen::VectorXd mu_dot = mu * pz;
    const double all = mu_z.dot(pz);
    mu_all[i] = all;
    const Eigen::VectorXd ind = mu_z - mu_dot;
    const Eigen::VectorXd dir = mu_dot.array() - all;
    const Eigen::MatrixXd tau = m.rowwise() - mu_z.transpose();

    acc[0] += (ind.array().square() * pz.array()).sum();
    acc[1] += (dir.array().square() * pz.array()).sum();
    acc[2] += 2.0 * (ind.array() * dir.array() * pz.array()).sum();

    double w4 = 0.0, w5 = 0.0, w6 = 0.0;
    for (int a = 0; a < J; ++a) {
      const double pbar = pa.row(a).dot(pz);
      const double tbar = tau.row(a).dot(pz);
      w4 += tbar * tbar * pbar;
      w5 += ((tau.row(a).array() - tbar).square() * pz.transpose().array()).sum() * pbar;
      // covariance over Z of tau^2 and pA
      const double e_t2 = tau.row(a).array().square().matrix().dot(pz);
      for (int z = 0; z < K; ++z) {
        w6 += pz(z) * (tau(a, z) * tau(a, z) - e_t2) * (pa(a, z) - pbar);
      }
    }
    acc[3] += w4;
    acc[4] += w5;
    acc[5] += w6;
    acc[7] += ((v.array() * pa.array()).colwise().sum().transpose() * pz.array()).sum();

    // within-X variance of Y and its two halves
    double wv = 0.0, gp = 0.0, hp = 0.0;
    for (int z = 0; z < K; ++z) {
      gp += pz(z) * (mu_z(z) - all) * (mu_z(z) - all);
      for (int a = 0; a < J; ++a) {
        wv += pz(z) * pa(a, z) * ((m(a, z) - all) * (m(a, z) - all) + v(a, z));
        hp += pz(z) * pa(a, z) * (m(a, z) - mu_z(z)) * (m(a, z) - mu_z(z));
      }
    }
    within += wv;
    gpart += gp;
    hpart += hp;
  }

  Components c;
  c.n_used = n;
  const double dn = static_cast<double>(n);
  for (std::size_t k = 0; k < kComponents; ++k) c.w[k] = acc[k].value() / dn;
  c.w[6] = n > 1 ? sample_variance(mu_all) : 0.0;
  c.total = c.w[6] + within.value() / dn;
  c.group_part = gpart.value() / dn;
  c.hospital_part = hpart.value() / dn;
  return c;
}

}  // namespace reference

}  // namespace vardecomp
