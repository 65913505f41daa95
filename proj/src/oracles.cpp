#include "vardecomp/oracles.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "vardecomp/error.hpp"

namespace vardecomp {

namespace {

constexpr double kSlack = 1e-9;

void invalid(const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); }

}  // namespace

void DiscreteLaw::validate() const {
  if (J < 1 || K < 1) invalid("law needs J >= 1 and K >= 1");
  if (support.empty()) invalid("law has an empty support");
  CompensatedSum total;
  for (std::size_t s = 0; s < support.size(); ++s) {
    const auto& pt = support[s];
    const std::string at = "support point " + std::to_string(s);
    if (!(pt.weight >= 0.0 && pt.weight <= 1.0 + kSlack)) invalid(at + ": weight outside [0, 1]");
    total += pt.weight;
    if (static_cast<int>(pt.pZ.size()) != K) invalid(at + ": pZ needs K entries");
    if (pt.pA.rows() != J || pt.pA.cols() != K || pt.m.rows() != J || pt.m.cols() != K || pt.v.rows() != J ||
        pt.v.cols() != K) {
      invalid(at + ": pA, m and v must be J x K");
    }
    double sz = 0.0;
    for (double q : pt.pZ) {
      if (!(q >= -kSlack && q <= 1.0 + kSlack)) invalid(at + ": pZ outside [0, 1]");
      sz += q;
    }
    if (std::abs(sz - 1.0) > kSlack) invalid(at + ": pZ does not sum to 1");
    for (int z = 0; z < K; ++z) {
      double sa = 0.0;
      for (int a = 0; a < J; ++a) {
        const double q = pt.pA(a, z);
        if (!(q >= -kSlack && q <= 1.0 + kSlack)) invalid(at + ": pA outside [0, 1]");
        if (!(pt.v(a, z) >= 0.0)) invalid(at + ": negative variance");
        if (!std::isfinite(pt.m(a, z))) invalid(at + ": non-finite mean");
        sa += q;
      }
      if (std::abs(sa - 1.0) > kSlack) invalid(at + ": pA column does not sum to 1");
    }
  }
  if (std::abs(total.value() - 1.0) > kSlack) invalid("support weights do not sum to 1");
}

DiscreteLaw::Point dichotomous_point(double weight, double xi, double pi1, double pi2, const Eigen::Matrix2d& m,
                                     const Eigen::Matrix2d& v) {
  DiscreteLaw::Point pt;
  pt.weight = weight;
  pt.pZ = {1.0 - xi, xi};
  pt.pA.resize(2, 2);
  pt.pA << 1.0 - pi1, 1.0 - pi2, pi1, pi2;
  pt.m = m;
  pt.v = v;
  return pt;
}

// ---------------------------------------------------------------------------
// Two-by-two closed forms. Local names follow the 0/1 coding: group 0 is code
// 1, hospital 1 is code 2.

Components dichotomous_components(const DiscreteLaw& law) {
  if (law.J != 2 || law.K != 2) {
    throw Error(ErrorKind::UnsupportedDims, "closed forms need J = K = 2, got J = " + std::to_string(law.J) +
                                                ", K = " + std::to_string(law.K));
  }
  law.validate();

  std::array<CompensatedSum, kComponents> acc;
  CompensatedSum es, es2, within;
  for (const auto& pt : law.support) {
    const double w = pt.weight;
    const double xi = pt.pZ[1];
    const double pi0 = pt.pA(1, 0), pi1 = pt.pA(1, 1);
    const double pi = (1.0 - xi) * pi0 + xi * pi1;
    const double m00 = pt.m(0, 0), m01 = pt.m(0, 1), m10 = pt.m(1, 0), m11 = pt.m(1, 1);

    const double mu00 = m00 * (1.0 - pi0) + m10 * pi0;
    const double mu11 = m01 * (1.0 - pi1) + m11 * pi1;
    const double mu01 = m00 * (1.0 - pi1) + m10 * pi1;  // group 0 under group 1's hospital mix
    const double mu10 = m01 * (1.0 - pi0) + m11 * pi0;
    const double mu0dot = mu00 * (1.0 - xi) + mu01 * xi;
    const double mu1dot = mu10 * (1.0 - xi) + mu11 * xi;
    const double mudd = mu00 * (1.0 - xi) + mu11 * xi;

    const double ind0 = mu00 - mu0dot, ind1 = mu11 - mu1dot;
    const double dir0 = mu0dot - mudd, dir1 = mu1dot - mudd;
    const double t00 = m00 - mu00, t01 = m01 - mu11;  // tau_0(0), tau_0(1)
    const double t10 = m10 - mu00, t11 = m11 - mu11;  // tau_1(0), tau_1(1)
    const double xx = xi * (1.0 - xi);

    acc[0] += w * (ind0 * ind0 * (1.0 - xi) + ind1 * ind1 * xi);
    acc[1] += w * (dir0 * dir0 * (1.0 - xi) + dir1 * dir1 * xi);
    acc[2] += w * 2.0 * (ind0 * dir0 * (1.0 - xi) + ind1 * dir1 * xi);
    const double tb0 = t00 * (1.0 - xi) + t01 * xi;
    const double tb1 = t10 * (1.0 - xi) + t11 * xi;
    acc[3] += w * (tb0 * tb0 * (1.0 - pi) + tb1 * tb1 * pi);
    acc[4] += w * (xx * (t01 - t00) * (t01 - t00) * (1.0 - pi) + xx * (t11 - t10) * (t11 - t10) * pi);
    acc[5] += w * xx * (pi0 - pi1) * (t01 * t01 - t00 * t00 - t11 * t11 + t10 * t10);

    const double S = (1.0 - xi) * (m00 * (1.0 - pi0) + m10 * pi0) + xi * (m01 * (1.0 - pi1) + m11 * pi1);
    es += w * S;
    es2 += w * S * S;
    const double r = (1.0 - xi) * (pt.v(0, 0) * (1.0 - pi0) + pt.v(1, 0) * pi0) +
                     xi * (pt.v(0, 1) * (1.0 - pi1) + pt.v(1, 1) * pi1);
    acc[7] += w * r;
    // V[Y | X] via the second moment around S
    double vx = 0.0;
    for (int a = 0; a < 2; ++a) {
      for (int z = 0; z < 2; ++z) {
        const double q = (z == 0 ? 1.0 - xi : xi) * pt.pA(a, z);
        vx += q * (pt.v(a, z) + (pt.m(a, z) - S) * (pt.m(a, z) - S));
      }
    }
    within += w * vx;
  }

  Components c;
  c.n_used = law.support.size();
  for (std::size_t k = 0; k < kComponents; ++k) c.w[k] = acc[k].value();
  c.w[6] = es2.value() - es.value() * es.value();
  c.total = c.w[6] + within.value();
  return c;
}

// ---------------------------------------------------------------------------

BruteForceResult brute_force_components(const DiscreteLaw& law) {
  law.validate();
  const int J = law.J, K = law.K;
  BruteForceResult r;
  std::array<CompensatedSum, kComponents> acc;
  CompensatedSum g, h, res, ey;

  std::vector<double> S(law.support.size());
  for (std::size_t s = 0; s < law.support.size(); ++s) {
    const auto& pt = law.support[s];
    const double w = pt.weight;

    auto mu = [&](int z, int zs) {
      double t = 0.0;
      for (int a = 0; a < J; ++a) t += pt.m(a, z) * pt.pA(a, zs);
      return t;
    };
    auto mu_dot = [&](int z) {
      double t = 0.0;
      for (int zs = 0; zs < K; ++zs) t += mu(z, zs) * pt.pZ[static_cast<std::size_t>(zs)];
      return t;
    };
    double mudd = 0.0;
    for (int z = 0; z < K; ++z) mudd += mu(z, z) * pt.pZ[static_cast<std::size_t>(z)];
    S[s] = mudd;

    // E_Z-weighted helpers
    auto EZ = [&](auto f) {
      double t = 0.0;
      for (int z = 0; z < K; ++z) t += f(z) * pt.pZ[static_cast<std::size_t>(z)];
      return t;
    };

    const double w1 = EZ([&](int z) { return std::pow(mu(z, z) - mu_dot(z), 2); });
    const double w2 = EZ([&](int z) { return std::pow(mu_dot(z) - mudd, 2); });
    const double w3 = EZ([&](int z) { return 2.0 * (mu(z, z) - mu_dot(z)) * (mu_dot(z) - mudd); });
    double w4 = 0.0, w5 = 0.0, w6 = 0.0;
    for (int a = 0; a < J; ++a) {
      auto tau = [&](int z) { return pt.m(a, z) - mu(z, z); };
      const double et = EZ(tau);
      const double ep = EZ([&](int z) { return pt.pA(a, z); });
      const double vt = EZ([&](int z) { return std::pow(tau(z) - et, 2); });
      const double et2 = EZ([&](int z) { return tau(z) * tau(z); });
      const double cov = EZ([&](int z) { return (tau(z) * tau(z) - et2) * (pt.pA(a, z) - ep); });
      w4 += et * et * ep;
      w5 += vt * ep;
      w6 += cov;
    }
    const double w8 = EZ([&](int z) {
      double t = 0.0;
      for (int a = 0; a < J; ++a) t += pt.v(a, z) * pt.pA(a, z);
      return t;
    });

    // three-way pieces by their own definitions
    const double vz_mu = EZ([&](int z) { return std::pow(mu(z, z) - mudd, 2); });
    const double ez_va = EZ([&](int z) {
      double t = 0.0;
      for (int a = 0; a < J; ++a) t += pt.pA(a, z) * std::pow(pt.m(a, z) - mu(z, z), 2);
      return t;
    });

    acc[0] += w * w1;
    acc[1] += w * w2;
    acc[2] += w * w3;
    acc[3] += w * w4;
    acc[4] += w * w5;
    acc[5] += w * w6;
    acc[7] += w * w8;
    g += w * vz_mu;
    h += w * ez_va;
    res += w * w8;
    for (int z = 0; z < K; ++z) {
      for (int a = 0; a < J; ++a) ey += w * pt.pZ[static_cast<std::size_t>(z)] * pt.pA(a, z) * pt.m(a, z);
    }
  }

  CompensatedSum cm;
  for (std::size_t s = 0; s < S.size(); ++s) cm += law.support[s].weight * std::pow(S[s] - ey.value(), 2);

  // V[Y] = E[(Y - EY)^2] summed over the joint law of (X, Z, A)
  CompensatedSum tot;
  for (const auto& pt : law.support) {
    for (int z = 0; z < K; ++z) {
      for (int a = 0; a < J; ++a) {
        const double q = pt.weight * pt.pZ[static_cast<std::size_t>(z)] * pt.pA(a, z);
        tot += q * (pt.v(a, z) + std::pow(pt.m(a, z) - ey.value(), 2));
      }
    }
  }

  for (std::size_t k = 0; k < kComponents; ++k) r.components.w[k] = acc[k].value();
  r.components.w[6] = cm.value();
  r.components.total = tot.value();
  r.components.n_used = law.support.size();
  r.components.group_part = g.value();
  r.components.hospital_part = h.value();
  r.group = g.value();
  r.hospital = h.value();
  r.residual = res.value();
  r.main_hospital = acc[3].value();
  r.effect_modification = acc[4].value();
  r.differential_selection = acc[5].value();
  r.case_mix = cm.value();
  r.total = tot.value();
  return r;
}

// ---------------------------------------------------------------------------

DiscreteLaw law_from_models(const FittedModels& models, const RowMatrix& points, std::span<const double> weights) {
  if (static_cast<std::size_t>(points.rows()) != weights.size()) {
    throw Error(ErrorKind::DimensionMismatch, "one weight per support point required");
  }
  const CellTable cells = build_cells(points, models);
  DiscreteLaw law;
  law.J = models.J;
  law.K = models.K;
  for (std::size_t i = 0; i < cells.rows(); ++i) {
    DiscreteLaw::Point pt;
    pt.weight = weights[i];
    pt.x.assign(points.row(static_cast<Eigen::Index>(i)).data(),
                points.row(static_cast<Eigen::Index>(i)).data() + points.cols());
    pt.pZ.resize(static_cast<std::size_t>(law.K));
    pt.pA.resize(law.J, law.K);
    pt.m.resize(law.J, law.K);
    pt.v.resize(law.J, law.K);
    for (int z = 1; z <= law.K; ++z) {
      pt.pZ[static_cast<std::size_t>(z - 1)] = cells.pZ(i, z);
      for (int a = 1; a <= law.J; ++a) {
        pt.pA(a - 1, z - 1) = cells.pA(i, a, z);
        pt.m(a - 1, z - 1) = cells.m(i, a, z);
        pt.v(a - 1, z - 1) = cells.v(i, a, z);
      }
    }
    law.support.push_back(std::move(pt));
  }
  return law;
}

DiscreteLaw random_law(const RandomLawOptions& opt, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  auto simplex = [&](int n) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double s = 0.0;
    for (auto& q : p) s += (q = 0.05 + unif(rng));
    for (auto& q : p) q /= s;
    return p;
  };

  DiscreteLaw law;
  law.J = opt.J;
  law.K = opt.K;
  const auto w = simplex(opt.support);
  for (int s = 0; s < opt.support; ++s) {
    DiscreteLaw::Point pt;
    pt.weight = w[static_cast<std::size_t>(s)];
    pt.pZ = simplex(opt.K);
    pt.pA.resize(opt.J, opt.K);
    pt.m.resize(opt.J, opt.K);
    pt.v.resize(opt.J, opt.K);
    for (int z = 0; z < opt.K; ++z) {
      const auto col = simplex(opt.J);
      for (int a = 0; a < opt.J; ++a) pt.pA(a, z) = col[static_cast<std::size_t>(a)];
    }
    std::vector<double> ea(static_cast<std::size_t>(opt.J)), ez(static_cast<std::size_t>(opt.K));
    for (auto& e : ea) e = opt.binary ? 0.25 * unif(rng) : norm(rng);
    for (auto& e : ez) e = opt.binary ? 0.25 * unif(rng) : norm(rng);
    const double base = opt.binary ? 0.2 * unif(rng) : norm(rng);
    for (int a = 0; a < opt.J; ++a) {
      for (int z = 0; z < opt.K; ++z) {
        double mean;
        if (opt.additive) {
          mean = base + ea[static_cast<std::size_t>(a)] + ez[static_cast<std::size_t>(z)];
        } else {
          mean = opt.binary ? 0.02 + 0.96 * unif(rng) : norm(rng);
        }
        pt.m(a, z) = mean;
        pt.v(a, z) = opt.binary ? mean * (1.0 - mean) : 0.1 + 1.9 * unif(rng);
      }
    }
    law.support.push_back(std::move(pt));
  }
  return law;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols, const char* what) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows) invalid(std::string(what) + " needs J rows");
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) invalid(std::string(what) + " needs K columns");
    for (int c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const DiscreteLaw& law) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& pt : law.support) {
    pts.push_back({{"weight", pt.weight},
                   {"x", pt.x},
                   {"pZ", pt.pZ},
                   {"pA", matrix_to_json(pt.pA)},
                   {"m", matrix_to_json(pt.m)},
                   {"v", matrix_to_json(pt.v)}});
  }
  j = nlohmann::json{{"J", law.J}, {"K", law.K}, {"support", pts}};
}

// Accepts either full tables or, for J = K = 2, the shorthand
// {"xi": P(Z=2|x), "pi": [P(A=2|z=1,x), P(A=2|z=2,x)]}.
void from_json(const nlohmann::json& j, DiscreteLaw& law) {
  try {
    law.J = j.at("J").get<int>();
    law.K = j.at("K").get<int>();
    law.support.clear();
    for (const auto& p : j.at("support")) {
      DiscreteLaw::Point pt;
      pt.weight = p.at("weight").get<double>();
      if (p.contains("x")) pt.x = p.at("x").get<std::vector<double>>();
      if (p.contains("xi")) {
        if (law.J != 2 || law.K != 2) invalid("xi/pi shorthand needs J = K = 2");
        const double xi = p.at("xi").get<double>();
        const auto pi = p.at("pi").get<std::vector<double>>();
        if (pi.size() != 2) invalid("pi needs two entries");
        pt.pZ = {1.0 - xi, xi};
        pt.pA.resize(2, 2);
        pt.pA << 1.0 - pi[0], 1.0 - pi[1], pi[0], pi[1];
      } else {
        pt.pZ = p.at("pZ").get<std::vector<double>>();
        pt.pA = matrix_from_json(p.at("pA"), law.J, law.K, "pA");
      }
      pt.m = matrix_from_json(p.at("m"), law.J, law.K, "m");
      pt.v = matrix_from_json(p.at("v"), law.J, law.K, "v");
      law.support.push_back(std::move(pt));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadFile, std::string("law JSON: ") + e.what());
  }
  law.validate();
}

DiscreteLaw load_law(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::BadFile, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadFile, path.string() + ": " + e.what());
  }
  return j.get<DiscreteLaw>();
}

}  // namespace vardecomp
