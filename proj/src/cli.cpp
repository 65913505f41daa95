#include "vardecomp/cli.hpp"

#include <openssl/evp.h>
#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "vardecomp/decompose.hpp"
#include "vardecomp/error.hpp"
#include "vardecomp/simulate.hpp"
#include "vardecomp/uncertainty.hpp"

namespace vardecomp {

nlohmann::json RunManifest::stable_json() const {
  return nlohmann::json{{"command", command},
                        {"config", config},
                        {"seed", seed},
                        {"version", version},
                        {"input_digest", input_digest.empty() ? nlohmann::json(nullptr) : nlohmann::json(input_digest)}};
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j = stable_json();
  j["timings"] = timings;
  return j;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::BadFile, "cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int k = 0; k < len; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[k]);
  return "sha256:" + hex.str();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::BadFile, "cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::BadFile, "cannot write " + path.string());
  return f;
}

nlohmann::json fit_diagnostics(const FittedModels& m) {
  return nlohmann::json{
      {"outcome",
       {{"link", to_string(m.outcome.link)},
        {"converged", m.outcome.converged},
        {"iterations", m.outcome.iterations},
        {"separation", m.outcome.separation},
        {"log_likelihood", m.outcome.log_likelihood}}},
      {"hospital",
       {{"converged", m.hospital.converged},
        {"iterations", m.hospital.iterations},
        {"separation", m.hospital.separation},
        {"log_likelihood", m.hospital.log_likelihood}}},
      {"group",
       {{"converged", m.group.converged},
        {"iterations", m.group.iterations},
        {"separation", m.group.separation},
        {"log_likelihood", m.group.log_likelihood}}}};
}

// Presentation transform of a w1..w8,total row.
ComponentRow present(const ComponentRow& row, bool percent) {
  ComponentRow out{};
  for (std::size_t k = 0; k < row.size(); ++k) {
    out[k] = percent ? 100.0 * row[k] / row[kComponents] : 100.0 * row[k];
  }
  return out;
}

struct DecomposeArgs {
  std::string data, outcome, hospital, group;
  std::vector<std::string> covariates;
  std::string outcome_kind;
  std::string uncertainty = "none";
  std::size_t B = 1000;
  std::uint64_t seed = 0;
  std::string out = "vardecomp_out";
  std::string scale = "percent";
  std::vector<std::string> hospital_levels, group_levels;
};

struct SimulateArgs {
  std::string scenario;
  std::vector<std::size_t> n;
  std::size_t reps = 200;
  std::uint64_t seed = 0;
  bool truth = false;
  bool figure_data = false;
  std::size_t superpop_n = 10000;
  std::size_t se_draws = 0;
  std::string out = ".";
};

int cmd_decompose(const DecomposeArgs& a, const std::string& command, std::ostream& out) {
  RunManifest manifest;
  manifest.command = command;
  manifest.seed = a.seed;
  manifest.config = {{"data", a.data},
                     {"outcome", a.outcome},
                     {"hospital", a.hospital},
                     {"group", a.group},
                     {"covariates", a.covariates},
                     {"outcome_kind", a.outcome_kind},
                     {"uncertainty", a.uncertainty},
                     {"B", a.B},
                     {"seed", a.seed},
                     {"scale", a.scale},
                     {"hospital_levels", a.hospital_levels},
                     {"group_levels", a.group_levels}};

  auto t0 = Clock::now();
  ColumnRoles roles;
  roles.outcome = a.outcome;
  roles.hospital = a.hospital;
  roles.group = a.group;
  roles.covariates = a.covariates;
  roles.outcome_kind = parse_outcome_kind(a.outcome_kind);
  roles.hospital_levels = a.hospital_levels;
  roles.group_levels = a.group_levels;
  manifest.input_digest = sha256_file(a.data);
  const Dataset data = load_csv(a.data, roles);
  manifest.timings["load"] = seconds_since(t0);

  t0 = Clock::now();
  const FittedModels models = fit_models(data);
  manifest.timings["fit"] = seconds_since(t0);

  t0 = Clock::now();
  const Components comp = decompose(data, models);
  manifest.timings["decompose"] = seconds_since(t0);

  const bool percent = a.scale == "percent";
  std::optional<UncertaintyResult> unc;
  t0 = Clock::now();
  if (a.uncertainty == "draws") {
    unc = posterior_draws(models, data, a.B, a.seed);
  } else if (a.uncertainty == "bootstrap") {
    unc = bootstrap(data, PipelineConfig{}, a.B, a.seed);
  }
  if (unc) manifest.timings["uncertainty"] = seconds_since(t0);

  nlohmann::json result;
  result["manifest"] = manifest.stable_json();
  nlohmann::json cj;
  to_json(cj, comp);
  result["n_used"] = cj["n_used"];
  result["components"] = cj["components"];
  result["proportions"] = cj["proportions"];
  result["sample_variance_y"] = cj["sample_variance_y"];
  nlohmann::json empty = nlohmann::json::array();
  for (const auto& [ha, gz] : comp.empty_cells) {
    empty.push_back({{"hospital", data.hospital.label(ha)}, {"group", data.group.label(gz)}});
  }
  result["empty_cells"] = empty;
  result["models"] = fit_diagnostics(models);

  const ComponentRow shown = present(comp.values(), percent);
  nlohmann::json pres = nlohmann::json::object();
  for (std::size_t k = 0; k < shown.size(); ++k) pres[kComponentNames[k]] = shown[k];
  result["presented"] = {{"scale", percent ? "percent" : "raw_x100"}, {"values", pres}};

  UncertaintySummary shown_summary;
  if (unc) {
    std::vector<ComponentRow> rows;
    rows.reserve(unc->replicates.size());
    for (const auto& r : unc->replicates) rows.push_back(present(r, percent));
    shown_summary = summarize(rows, unc->summary.method, unc->summary.seed, unc->summary.B, unc->summary.failures);
    nlohmann::json uj;
    to_json(uj, unc->summary);
    nlohmann::json sj;
    to_json(sj, shown_summary);
    result["uncertainty"] = {{"raw", uj}, {"presented", sj["components"]}};
  }

  const std::filesystem::path stem(a.out);
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  write_json(stem.string() + ".json", result);
  {
    auto f = open_out(stem.string() + ".csv");
    f << "component,value,presented";
    if (unc) f << ",point,lo,hi,sd";
    f << '\n';
    const auto vals = comp.values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      f << kComponentNames[k] << ',' << format_double(vals[k]) << ',' << format_double(shown[k]);
      if (unc) {
        const auto& s = shown_summary.stats[k];
        f << ',' << format_double(s.point) << ',' << format_double(s.lo) << ',' << format_double(s.hi) << ','
          << format_double(s.sd);
      }
      f << '\n';
    }
  }
  if (unc) {
    auto f = open_out(stem.string() + "_replicates.csv");
    write_replicates_csv(*unc, f);
  }
  write_json(stem.string() + "_manifest.json", manifest.to_json());

  out << "n=" << comp.n_used << " total=" << format_double(comp.total) << '\n';
  for (std::size_t k = 0; k < kComponents; ++k) {
    out << "  " << std::left << std::setw(24) << kComponentNames[k] << format_double(shown[k]) << '\n';
  }
  if (unc && unc->summary.failures > 0) {
    out << unc->summary.failures << " of " << unc->summary.B << " bootstrap refits failed and were dropped\n";
  }
  return kExitOk;
}

int cmd_simulate(const SimulateArgs& a, const std::string& command, std::ostream& out) {
  RunManifest manifest;
  manifest.command = command;
  manifest.seed = a.seed;
  manifest.config = {{"scenario", a.scenario},       {"n", a.n},
                     {"reps", a.reps},               {"seed", a.seed},
                     {"truth", a.truth},             {"figure_data", a.figure_data},
                     {"superpop_n", a.superpop_n},   {"se_draws", a.se_draws}};
  const Scenario scenario = resolve_scenario(a.scenario);
  if (std::filesystem::is_regular_file(a.scenario)) manifest.input_digest = sha256_file(a.scenario);
  nlohmann::json sj;
  to_json(sj, scenario);
  manifest.config["scenario_definition"] = sj;
  manifest.config["error_sd"] = scenario.error_sd;
  if (a.n.empty() && !a.truth) throw Error(ErrorKind::InvalidArgument, "nothing to do: give --n and/or --truth");

  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);

  std::optional<TruthReport> truth;
  if (a.truth || a.figure_data) {
    const auto t0 = Clock::now();
    truth = true_components(scenario, a.superpop_n, substream_seed(a.seed, 0xC0FFEEull));
    manifest.timings["truth"] = seconds_since(t0);
    nlohmann::json tj;
    to_json(tj, *truth);
    write_json(dir / "truth.json", {{"manifest", manifest.stable_json()}, {"truth", tj}});
    out << "truth total=" << format_double(truth->components.total) << '\n';
  }

  std::vector<ReplicationReport> reports;
  for (std::size_t n : a.n) {
    const auto t0 = Clock::now();
    ReplicationOptions opt;
    opt.reps = a.reps;
    opt.seed = substream_seed(a.seed, n);
    opt.draws = a.se_draws;
    reports.push_back(run_replicates(scenario, n, opt));
    manifest.timings["replicates_n" + std::to_string(n)] = seconds_since(t0);
    const auto& rep = reports.back();
    nlohmann::json rj;
    to_json(rj, rep);
    write_json(dir / ("replication_n" + std::to_string(n) + ".json"), {{"manifest", manifest.stable_json()}, {"report", rj}});
    auto f = open_out(dir / ("replicates_n" + std::to_string(n) + ".csv"));
    write_replicates_csv(rep, f);
    out << "n=" << n << " replicates=" << rep.estimates.size() << " failures=" << rep.failures << '\n';
  }

  if (a.figure_data && !reports.empty()) {
    auto f = open_out(dir / "figure_estimates.csv");
    for (std::size_t r = 0; r < reports.size(); ++r) write_estimates_long(reports[r], &*truth, f, r == 0);
    if (a.se_draws > 0) {
      auto g = open_out(dir / "figure_se.csv");
      for (std::size_t r = 0; r < reports.size(); ++r) write_se_long(reports[r], g, r == 0);
    }
  }
  write_json(dir / "manifest.json", manifest.to_json());
  return kExitOk;
}

std::string join_args(const std::vector<std::string>& args) {
  std::string s = "vardecomp";
  for (const auto& x : args) s += " " + x;
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal eight-way variance decomposition of hospital outcomes"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "read options from a TOML/INI file");
  int threads = 0;
  app.add_option("--threads", threads, "cap on worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);

  DecomposeArgs d;
  auto* dec = app.add_subcommand("decompose", "fit the three models on a CSV and decompose");
  dec->add_option("--data", d.data, "input CSV")->required()->check(CLI::ExistingFile);
  dec->add_option("--outcome", d.outcome, "outcome column")->required();
  dec->add_option("--hospital", d.hospital, "hospital column")->required();
  dec->add_option("--group", d.group, "group column")->required();
  dec->add_option("--covariates", d.covariates, "covariate columns (comma separated)")->delimiter(',');
  dec->add_option("--outcome-kind", d.outcome_kind, "binary or continuous")
      ->required()
      ->check(CLI::IsMember({"binary", "continuous"}));
  dec->add_option("--uncertainty", d.uncertainty, "none, draws or bootstrap")
      ->check(CLI::IsMember({"none", "draws", "bootstrap"}));
  dec->add_option("--B", d.B, "replicates for draws/bootstrap")->check(CLI::Range(std::size_t{2}, std::size_t{1000000}));
  dec->add_option("--seed", d.seed, "master seed")->required();
  dec->add_option("--out", d.out, "output path stem");
  dec->add_option("--scale", d.scale, "percent (of total) or raw (x100)")->check(CLI::IsMember({"percent", "raw"}));
  dec->add_option("--hospital-levels", d.hospital_levels, "explicit hospital level order")->delimiter(',');
  dec->add_option("--group-levels", d.group_levels, "explicit group level order")->delimiter(',');

  SimulateArgs s;
  auto* sim = app.add_subcommand("simulate", "simulation scenarios: truth and replication runs");
  sim->add_option("--scenario", s.scenario, "j5-binary, j10-binary, j5-continuous, j10-continuous or a JSON file")
      ->required();
  sim->add_option("--n", s.n, "sample sizes")->delimiter(',');
  sim->add_option("--reps", s.reps, "replicates per sample size")->check(CLI::Range(std::size_t{2}, std::size_t{1000000}));
  sim->add_option("--seed", s.seed, "master seed")->required();
  sim->add_flag("--truth", s.truth, "evaluate the super-population truth");
  sim->add_option("--superpop-n", s.superpop_n, "super-population size")->check(CLI::Range(std::size_t{1000}, std::size_t{100000000}));
  sim->add_flag("--figure-data", s.figure_data, "write long-format estimate and SE tables");
  sim->add_option("--se-draws", s.se_draws, "posterior draws per replicate for standard errors (0 = none)");
  sim->add_option("--out", s.out, "output directory");

  std::vector<std::string> argv_store{"vardecomp"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& x : argv_store) argv.push_back(x.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  if (threads > 0) omp_set_num_threads(threads);
  const std::string command = join_args(args);
  try {
    if (*dec) return cmd_decompose(d, command, out);
    return cmd_simulate(s, command, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_numerical(e.kind()) ? kExitNumerical : kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
}

}  // namespace vardecomp
