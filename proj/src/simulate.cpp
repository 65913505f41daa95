#include "vardecomp/simulate.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>

#include "vardecomp/error.hpp"
#include "vardecomp/numeric.hpp"

namespace vardecomp {

namespace {

void invalid(const std::string& what) { throw Error(ErrorKind::InvalidArgument, what); }

Eigen::MatrixXd rows_of(std::initializer_list<std::initializer_list<double>> rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Eigen::VectorXd vec_of(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) v(k++) = x;
  return v;
}

Scenario make_builtin(int J, Link link) {
  Scenario s;
  s.J = J;
  s.K = 3;
  s.link = link;
  s.name = (J == 5 ? std::string("j5-") : std::string("j10-")) + (link == Link::Logit ? "binary" : "continuous");
  s.group_coef = rows_of({{0.2, 0.1, 0.2}, {0.2, 0.2, 0.3}});
  s.beta0 = -0.5;
  s.beta << 1.4, -1.4;
  s.theta = vec_of({-0.5, 1.0});
  s.error_sd = 1.0;
  if (J == 5) {
    s.hospital_coef = rows_of({{0.1, 0.1, 0.2, 1.0, 0.1},
                               {-0.2, 0.5, 0.5, 0.2, 0.5},
                               {0.1, 0.1, 0.2, 0.3, 1.2},
                               {0.1, 0.5, 0.5, -0.4, 0.7}});
    s.gamma = vec_of({1.5, 0.5, 1.6, 0.0});
    s.phi.resize(4, 2);
    s.phi.col(0) = vec_of({1.0, 1.2, -0.2, -0.5});
    s.phi.col(1) = vec_of({-1.4, 1.5, -1.6, -0.3});
  } else {
    s.hospital_coef = rows_of({{0.1, 0.1, 0.2, 1.0, 0.1},
                               {-0.2, 0.5, 0.5, 0.2, 0.5},
                               {0.1, 0.1, 0.2, 0.3, 1.2},
                               {0.1, 0.5, 0.5, -0.4, 0.7},
                               {0.1, 0.1, 0.2, 1.0, 0.1},
                               {-0.2, 0.5, 0.5, 0.2, 0.5},
                               {0.1, 0.1, 0.2, 0.3, 1.2},
                               {0.1, 0.5, 0.5, -0.4, 0.7},
                               {0.2, 0.3, 0.3, 0.6, 0.6}});
    s.gamma = vec_of({1.5, 0.5, 1.6, 0.0, 1.3, 0.0, 1.4, 0.0, 1.2});
    s.phi.resize(9, 2);
    s.phi.col(0) = vec_of({1.0, 1.2, -0.2, -0.5, 1.2, 1.3, -0.5, -0.2, -0.2});
    s.phi.col(1) = vec_of({-1.4, 1.5, -1.6, -0.3, -1.4, 1.3, -1.5, 1.6, -0.4});
  }
  return s;
}

// draw from a probability vector with one uniform
int categorical(const std::vector<double>& probs, double u) {
  double c = 0.0;
  for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
    c += probs[k];
    if (u < c) return static_cast<int>(k) + 1;
  }
  return static_cast<int>(probs.size());
}

}  // namespace

void Scenario::validate() const {
  if (J < 2 || K < 2) invalid("scenario needs J >= 2 and K >= 2");
  if (group_coef.rows() != K - 1 || group_coef.cols() != 1 + p) invalid("group_coef must be (K-1) x 3");
  if (hospital_coef.rows() != J - 1 || hospital_coef.cols() != 1 + p + K - 1) {
    invalid("hospital_coef must be (J-1) x (2 + K)");
  }
  if (gamma.size() != J - 1) invalid("gamma needs J-1 entries");
  if (theta.size() != K - 1) invalid("theta needs K-1 entries");
  if (phi.rows() != J - 1 || phi.cols() != K - 1) invalid("phi must be (J-1) x (K-1)");
  if (!(error_sd >= 0.0)) invalid("error_sd must be nonnegative");
}

FittedModels Scenario::true_models() const {
  validate();
  const OutcomeLayout layout{J, K, p};
  Eigen::VectorXd th = Eigen::VectorXd::Zero(layout.length());
  th(0) = beta0;
  th(layout.covariate(0)) = beta(0);
  th(layout.covariate(1)) = beta(1);
  for (int a = 2; a <= J; ++a) th(layout.hospital(a)) = gamma(a - 2);
  for (int z = 2; z <= K; ++z) th(layout.group(z)) = theta(z - 2);
  for (int a = 2; a <= J; ++a) {
    for (int z = 2; z <= K; ++z) th(layout.interaction(a, z)) = phi(a - 2, z - 2);
  }
  FittedModels m;
  m.J = J;
  m.K = K;
  m.p = p;
  m.outcome_kind = outcome_kind();
  m.outcome = make_glm(th, link, link == Link::Identity ? error_sd : 0.0);
  m.hospital = make_multinomial(hospital_coef);
  m.group = make_multinomial(group_coef);
  return m;
}

std::vector<std::string> builtin_scenarios() {
  return {"j5-binary", "j10-binary", "j5-continuous", "j10-continuous"};
}

Scenario builtin_scenario(std::string_view name) {
  if (name == "j5-binary") return make_builtin(5, Link::Logit);
  if (name == "j10-binary") return make_builtin(10, Link::Logit);
  if (name == "j5-continuous") return make_builtin(5, Link::Identity);
  if (name == "j10-continuous") return make_builtin(10, Link::Identity);
  throw Error(ErrorKind::InvalidArgument, "unknown scenario '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json mat_json(const Eigen::MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    out.push_back(row);
  }
  return out;
}

Eigen::MatrixXd json_mat(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) invalid("ragged coefficient matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

Eigen::VectorXd json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> vec_json(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void to_json(nlohmann::json& j, const Scenario& s) {
  j = nlohmann::json{{"name", s.name},
                     {"J", s.J},
                     {"K", s.K},
                     {"link", to_string(s.link)},
                     {"group_coef", mat_json(s.group_coef)},
                     {"hospital_coef", mat_json(s.hospital_coef)},
                     {"outcome",
                      {{"beta0", s.beta0},
                       {"beta", vec_json(s.beta)},
                       {"gamma", vec_json(s.gamma)},
                       {"theta", vec_json(s.theta)},
                       {"phi", mat_json(s.phi)}}},
                     {"error_sd", s.error_sd}};
}

void from_json(const nlohmann::json& j, Scenario& s) {
  try {
    s.name = j.value("name", std::string("custom"));
    s.J = j.at("J").get<int>();
    s.K = j.at("K").get<int>();
    const auto link = j.at("link").get<std::string>();
    if (link == "logit") {
      s.link = Link::Logit;
    } else if (link == "identity") {
      s.link = Link::Identity;
    } else {
      invalid("link must be 'logit' or 'identity'");
    }
    s.group_coef = json_mat(j.at("group_coef"));
    s.hospital_coef = json_mat(j.at("hospital_coef"));
    const auto& o = j.at("outcome");
    s.beta0 = o.at("beta0").get<double>();
    const auto b = json_vec(o.at("beta"));
    if (b.size() != 2) invalid("outcome.beta needs two entries");
    s.beta = b;
    s.gamma = json_vec(o.at("gamma"));
    s.theta = json_vec(o.at("theta"));
    s.phi = json_mat(o.at("phi"));
    s.error_sd = j.value("error_sd", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadFile, std::string("scenario JSON: ") + e.what());
  }
  s.validate();
}

Scenario resolve_scenario(const std::string& name_or_path) {
  for (const auto& b : builtin_scenarios()) {
    if (b == name_or_path) return builtin_scenario(b);
  }
  std::ifstream in(name_or_path);
  if (!in) throw Error(ErrorKind::BadFile, "no built-in scenario or readable file named '" + name_or_path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadFile, name_or_path + ": " + e.what());
  }
  return j.get<Scenario>();
}

// ---------------------------------------------------------------------------

Dataset generate(const Scenario& s, std::size_t n, std::uint64_t seed) {
  s.validate();
  if (n == 0) invalid("n must be positive");
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);

  std::vector<double> y(n);
  std::vector<int> a(n), z(n);
  RowMatrix x(static_cast<Eigen::Index>(n), Scenario::p);
  std::vector<double> eta(static_cast<std::size_t>(std::max(s.J, s.K)));
  std::vector<double> pz(static_cast<std::size_t>(s.K)), pa(static_cast<std::size_t>(s.J));

  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = unif(rng) < 0.5 ? 1.0 : 0.0;
    const double x2 = norm(rng);
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = x1;
    x(r, 1) = x2;

    for (int l = 0; l < s.K - 1; ++l) {
      eta[static_cast<std::size_t>(l)] = s.group_coef(l, 0) + s.group_coef(l, 1) * x1 + s.group_coef(l, 2) * x2;
    }
    softmax_with_reference({eta.data(), static_cast<std::size_t>(s.K - 1)}, pz);
    const int zi = categorical(pz, unif(rng));

    for (int l = 0; l < s.J - 1; ++l) {
      double e = s.hospital_coef(l, 0) + s.hospital_coef(l, 1) * x1 + s.hospital_coef(l, 2) * x2;
      if (zi > 1) e += s.hospital_coef(l, 3 + (zi - 2));
      eta[static_cast<std::size_t>(l)] = e;
    }
    softmax_with_reference({eta.data(), static_cast<std::size_t>(s.J - 1)}, pa);
    const int ai = categorical(pa, unif(rng));

    double lp = s.beta0 + s.beta(0) * x1 + s.beta(1) * x2;
    if (ai > 1) lp += s.gamma(ai - 2);
    if (zi > 1) lp += s.theta(zi - 2);
    if (ai > 1 && zi > 1) lp += s.phi(ai - 2, zi - 2);
    if (s.link == Link::Logit) {
      y[i] = unif(rng) < inverse_link(Link::Logit, lp) ? 1.0 : 0.0;
    } else {
      y[i] = lp + s.error_sd * norm(rng);
    }
    a[i] = ai;
    z[i] = zi;
  }
  return make_dataset(std::move(y), std::move(a), std::move(z), std::move(x), s.J, s.K, s.outcome_kind());
}

TruthReport true_components(const Scenario& s, std::size_t superpop_n, std::uint64_t seed) {
  if (superpop_n < 1000) invalid("super-population needs at least 1000 rows");
  const FittedModels models = s.true_models();
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  RowMatrix x(static_cast<Eigen::Index>(superpop_n), Scenario::p);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = unif(rng) < 0.5 ? 1.0 : 0.0;
    x(i, 1) = norm(rng);
  }

  TruthReport t;
  t.superpop_n = superpop_n;
  t.seed = seed;
  t.components = decompose(x, models);

  // per-row summands for the Monte Carlo standard errors
  const CellTable cells = build_cells(x, models);
  std::vector<RowTerms> rows(superpop_n);
  std::vector<double> mu(superpop_n);
  for (std::size_t i = 0; i < superpop_n; ++i) {
    rows[i] = row_terms(cells, i);
    mu[i] = rows[i].w[6];
  }
  const double mbar = compensated_mean(mu);
  const double root_n = std::sqrt(static_cast<double>(superpop_n));
  std::vector<double> col(superpop_n);
  for (std::size_t k = 0; k < kComponents + 1; ++k) {
    for (std::size_t i = 0; i < superpop_n; ++i) {
      const double dev2 = (mu[i] - mbar) * (mu[i] - mbar);
      if (k == 6) {
        col[i] = dev2;
      } else if (k == kComponents) {
        col[i] = dev2 + rows[i].within;
      } else {
        col[i] = rows[i].w[k];
      }
    }
    t.mc_se[k] = sample_sd(col) / root_n;
  }
  return t;
}

// ---------------------------------------------------------------------------

ReplicationReport run_replicates(const Scenario& s, std::size_t n, const ReplicationOptions& opt) {
  if (opt.reps < 2) invalid("reps must be at least 2");
  s.validate();

  struct Outcome {
    std::optional<ComponentRow> estimate;
    ComponentRow se{};
    std::string error;
  };
  std::vector<Outcome> out(opt.reps);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(opt.reps); ++r) {
    auto& o = out[static_cast<std::size_t>(r)];
    const auto ru = static_cast<std::uint64_t>(r);
    try {
      const Dataset data = generate(s, n, substream_seed(opt.seed, 2 * ru));
      const FittedModels models = fit_models(data);
      o.estimate = decompose(data, models).values();
      if (opt.draws > 0) {
        const auto draws = posterior_draws(models, data, opt.draws, substream_seed(opt.seed, 2 * ru + 1));
        for (std::size_t k = 0; k < kComponents + 1; ++k) o.se[k] = draws.summary.stats[k].sd;
      }
    } catch (const Error& e) {
      o.estimate.reset();
      o.error = e.what();
    }
  }

  ReplicationReport rep;
  rep.scenario = s.name;
  rep.n = n;
  rep.reps = opt.reps;
  rep.seed = opt.seed;
  rep.draws = opt.draws;
  for (std::size_t r = 0; r < opt.reps; ++r) {
    if (out[r].estimate) {
      rep.index.push_back(r);
      rep.estimates.push_back(*out[r].estimate);
      if (opt.draws > 0) rep.se.push_back(out[r].se);
    } else {
      ++rep.failures;
      rep.failure_messages.push_back("replicate " + std::to_string(r) + ": " + out[r].error);
    }
  }
  if (rep.estimates.size() < 2) {
    throw Error(ErrorKind::TooManyFailures, "fewer than two replicates fitted");
  }

  std::vector<double> col(rep.estimates.size());
  for (std::size_t k = 0; k < kComponents + 1; ++k) {
    for (std::size_t r = 0; r < col.size(); ++r) col[r] = rep.estimates[r][k];
    rep.mean[k] = compensated_mean(col);
    rep.median[k] = median(col);
    rep.mc_sd[k] = sample_sd(col);
    if (!rep.se.empty()) {
      for (std::size_t r = 0; r < col.size(); ++r) col[r] = rep.se[r][k];
      rep.mean_se[k] = compensated_mean(col);
      rep.sd_minus_se[k] = rep.mc_sd[k] - rep.mean_se[k];
    } else {
      rep.mean_se[k] = std::numeric_limits<double>::quiet_NaN();
      rep.sd_minus_se[k] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Output

namespace {

nlohmann::json named(const ComponentRow& row) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (std::isnan(row[k])) {
      j[kComponentNames[k]] = nullptr;
    } else {
      j[kComponentNames[k]] = row[k];
    }
  }
  return j;
}

}  // namespace

void to_json(nlohmann::json& j, const TruthReport& t) {
  j = nlohmann::json{{"superpop_n", t.superpop_n},
                     {"seed", t.seed},
                     {"components", named(t.components.values())},
                     {"mc_se", named(t.mc_se)}};
}

void to_json(nlohmann::json& j, const ReplicationReport& r) {
  j = nlohmann::json{{"scenario", r.scenario},
                     {"n", r.n},
                     {"reps", r.reps},
                     {"seed", r.seed},
                     {"draws", r.draws},
                     {"used", r.estimates.size()},
                     {"failures", r.failures},
                     {"failure_messages", r.failure_messages},
                     {"mean", named(r.mean)},
                     {"median", named(r.median)},
                     {"mc_sd", named(r.mc_sd)},
                     {"mean_se", named(r.mean_se)},
                     {"sd_minus_se", named(r.sd_minus_se)}};
}

void write_estimates_long(const ReplicationReport& r, const TruthReport* truth, std::ostream& out, bool header) {
  if (header) out << "scenario,n,replicate,component,estimate,truth\n";
  const auto tv = truth ? truth->components.values() : ComponentRow{};
  for (std::size_t i = 0; i < r.estimates.size(); ++i) {
    for (std::size_t k = 0; k < kComponents + 1; ++k) {
      out << r.scenario << ',' << r.n << ',' << r.index[i] << ',' << kComponentNames[k] << ','
          << format_double(r.estimates[i][k]) << ',' << (truth ? format_double(tv[k]) : std::string("NA")) << '\n';
    }
  }
}

void write_se_long(const ReplicationReport& r, std::ostream& out, bool header) {
  if (header) out << "scenario,n,component,mc_sd,mean_se,difference\n";
  auto fmt = [](double v) { return std::isnan(v) ? std::string("NA") : format_double(v); };
  for (std::size_t k = 0; k < kComponents + 1; ++k) {
    out << r.scenario << ',' << r.n << ',' << kComponentNames[k] << ',' << fmt(r.mc_sd[k]) << ','
        << fmt(r.mean_se[k]) << ',' << fmt(r.sd_minus_se[k]) << '\n';
  }
}

void write_replicates_csv(const ReplicationReport& r, std::ostream& out) {
  out << "replicate";
  for (const char* name : kComponentNames) out << ',' << name;
  if (!r.se.empty()) {
    for (const char* name : kComponentNames) out << ",se_" << name;
  }
  out << '\n';
  for (std::size_t i = 0; i < r.estimates.size(); ++i) {
    out << r.index[i];
    for (double v : r.estimates[i]) out << ',' << format_double(v);
    if (!r.se.empty()) {
      for (double v : r.se[i]) out << ',' << format_double(v);
    }
    out << '\n';
  }
}

}  // namespace vardecomp
