#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "vardecomp/cli.hpp"
#include "vardecomp/dataset.hpp"
#include "vardecomp/simulate.hpp"

using namespace vardecomp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("vardecomp_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

fs::path write_sample(const fs::path& dir, std::size_t n = 1500, std::uint64_t seed = 3) {
  const Dataset d = generate(builtin_scenario("j5-binary"), n, seed);
  const fs::path p = dir / "sample.csv";
  save_csv(d, p);
  return p;
}

std::vector<std::string> decompose_args(const fs::path& data, const fs::path& out) {
  return {"decompose", "--data",  data.string(), "--outcome",      "y",      "--hospital", "a",
          "--group",   "z",       "--covariates", "x1,x2", "--outcome-kind", "binary", "--seed",     "7",
          "--out",     out.string()};
}

}  // namespace

TEST_CASE("decompose on a small CSV") {
  TempDir tmp("small");
  const fs::path data = write_sample(tmp.path);
  const Run r = run(decompose_args(data, tmp.path / "res"));
  REQUIRE(r.code == kExitOk);
  const auto j = read_json(tmp.path / "res.json");
  double sum = 0.0;
  for (const char* name : kComponentNames) {
    REQUIRE(j["components"][name].is_number());
    if (std::string(name) != "total") sum += j["components"][name].get<double>();
  }
  CHECK(std::abs(sum - j["components"]["total"].get<double>()) < 1e-10 * j["components"]["total"].get<double>());
  CHECK(j["manifest"]["input_digest"].get<std::string>().rfind("sha256:", 0) == 0);
  CHECK(j["manifest"]["seed"] == 7);
  CHECK_FALSE(j["manifest"].contains("timings"));
  CHECK(read_json(tmp.path / "res_manifest.json").contains("timings"));
  CHECK(j["presented"]["scale"] == "percent");
  CHECK(j["presented"]["values"]["total"].get<double>() == doctest::Approx(100.0));
  CHECK(fs::exists(tmp.path / "res.csv"));
  CHECK_FALSE(fs::exists(tmp.path / "res_replicates.csv"));
}

TEST_CASE("raw scale multiplies by 100") {
  TempDir tmp("raw");
  const fs::path data = write_sample(tmp.path);
  auto args = decompose_args(data, tmp.path / "raw");
  args.insert(args.end(), {"--scale", "raw"});
  REQUIRE(run(args).code == kExitOk);
  const auto j = read_json(tmp.path / "raw.json");
  CHECK(j["presented"]["values"]["residual"].get<double>() ==
        doctest::Approx(100.0 * j["components"]["residual"].get<double>()));
}

TEST_CASE("input errors exit 2") {
  TempDir tmp("bad");
  const fs::path data = write_sample(tmp.path);
  auto args = decompose_args(data, tmp.path / "x");
  SUBCASE("missing --hospital") {
    args.erase(args.begin() + 5, args.begin() + 7);
    CHECK(run(args).code == kExitInput);
  }
  SUBCASE("unknown column") {
    args[4] = "outcome_that_is_not_there";
    const Run r = run(args);
    CHECK(r.code == kExitInput);
    CHECK(r.err.find("outcome_that_is_not_there") != std::string::npos);
  }
  SUBCASE("missing value names the row") {
    std::ofstream f(tmp.path / "holes.csv");
    f << "y,a,z,x1,x2\n1,1,1,0,0.5\n0,2,2,NA,0.1\n";
    f.close();
    const Run r = run(decompose_args(tmp.path / "holes.csv", tmp.path / "x"));
    CHECK(r.code == kExitInput);
    CHECK(r.err.find("x1") != std::string::npos);
  }
  SUBCASE("no seed") {
    args.erase(args.begin() + 13, args.begin() + 15);
    CHECK(run(args).code == kExitInput);
  }
  SUBCASE("no subcommand") { CHECK(run({}).code == kExitInput); }
  SUBCASE("bad scenario file") {
    std::ofstream f(tmp.path / "scenario.json");
    f << "{\"J\": 5}";
    f.close();
    CHECK(run({"simulate", "--scenario", (tmp.path / "scenario.json").string(), "--seed", "1", "--truth", "--out",
               tmp.path.string()})
              .code == kExitInput);
  }
  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("separated outcome is flagged, collinear covariates exit 3") {
  TempDir tmp("sep");
  {
    std::ofstream f(tmp.path / "sep.csv");
    f << "y,a,z,x1,x2\n";
    for (int i = 0; i < 40; ++i) {
      const double x = -2.0 + 0.1 * i + 0.05;
      f << (x > 0 ? 1 : 0) << ',' << (1 + i % 2) << ',' << (1 + (i / 2) % 2) << ',' << x << ',' << 2 * x << '\n';
    }
  }
  const std::vector<std::string> base{"decompose", "--data", (tmp.path / "sep.csv").string(), "--outcome", "y",
                                      "--hospital", "a", "--group", "z", "--outcome-kind", "binary", "--seed", "1",
                                      "--out", (tmp.path / "o").string(), "--covariates"};
  auto one = base;
  one.push_back("x1");
  REQUIRE(run(one).code == kExitOk);
  CHECK(read_json(tmp.path / "o.json")["models"]["outcome"]["separation"] == true);
  auto both = base;
  both.push_back("x1,x2");
  const Run r = run(both);
  CHECK(r.code == kExitNumerical);
  CHECK(r.err.find("x2") != std::string::npos);
}

TEST_CASE("bootstrap output is deterministic") {
  TempDir tmp("boot");
  const fs::path data = write_sample(tmp.path, 800);
  auto args = decompose_args(data, tmp.path / "b");
  args.insert(args.end(), {"--uncertainty", "bootstrap", "--B", "30"});
  REQUIRE(run(args).code == kExitOk);
  const std::string first = sha256_file(tmp.path / "b.json") + sha256_file(tmp.path / "b.csv") +
                            sha256_file(tmp.path / "b_replicates.csv");
  REQUIRE(run(args).code == kExitOk);
  const std::string second = sha256_file(tmp.path / "b.json") + sha256_file(tmp.path / "b.csv") +
                             sha256_file(tmp.path / "b_replicates.csv");
  CHECK(first == second);
  const auto j = read_json(tmp.path / "b.json");
  CHECK(j["uncertainty"]["raw"]["method"] == "bootstrap");
  const auto used = j["uncertainty"]["raw"]["used"].get<int>();
  CHECK(used + j["uncertainty"]["raw"]["failures"].get<int>() == 30);
  CHECK(used >= 27);
  const std::string reps = slurp(tmp.path / "b_replicates.csv");
  CHECK(std::count(reps.begin(), reps.end(), '\n') == used + 1);
}

TEST_CASE("results do not depend on the thread cap") {
  TempDir tmp("threads");
  const fs::path data = write_sample(tmp.path, 3000);
  auto a1 = decompose_args(data, tmp.path / "t");
  a1.insert(a1.end(), {"--uncertainty", "draws", "--B", "40"});
  auto a4 = a1;
  a1.insert(a1.begin(), {"--threads", "1"});
  a4.insert(a4.begin(), {"--threads", "4"});
  REQUIRE(run(a1).code == kExitOk);
  auto j1 = read_json(tmp.path / "t.json");
  const std::string r1 = slurp(tmp.path / "t_replicates.csv");
  REQUIRE(run(a4).code == kExitOk);
  auto j4 = read_json(tmp.path / "t.json");
  j1.erase("manifest");
  j4.erase("manifest");
  CHECK(j1 == j4);
  CHECK(r1 == slurp(tmp.path / "t_replicates.csv"));
  run({"--threads", "1", "simulate", "--scenario", "j5-binary", "--seed", "1", "--truth", "--out",
       tmp.path.string()});
}

TEST_CASE("simulate truth and replicates") {
  TempDir tmp("sim");
  const std::string out = tmp.path.string();
  REQUIRE(run({"simulate", "--scenario", "j5-binary", "--truth", "--seed", "1", "--superpop-n", "2000", "--out", out})
              .code == kExitOk);
  const auto t = read_json(tmp.path / "truth.json");
  double sum = 0.0;
  for (std::size_t k = 0; k < 8; ++k) sum += t["truth"]["components"][kComponentNames[k]].get<double>();
  CHECK(t["truth"]["components"].size() == 9);
  CHECK(std::abs(sum - t["truth"]["components"]["total"].get<double>()) < 1e-10);

  const std::vector<std::string> rep_args{"simulate", "--scenario", "j5-binary", "--n",    "600", "--reps", "2",
                                          "--seed",   "4",          "--figure-data", "--superpop-n", "2000",
                                          "--se-draws", "10",       "--out",        out};
  REQUIRE(run(rep_args).code == kExitOk);
  const std::string csv = slurp(tmp.path / "replicates_n600.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const auto rj = read_json(tmp.path / "replication_n600.json");
  CHECK(rj["report"]["used"] == 2);
  CHECK(fs::exists(tmp.path / "figure_estimates.csv"));
  CHECK(fs::exists(tmp.path / "figure_se.csv"));
  const std::string before = slurp(tmp.path / "replication_n600.json") + csv + slurp(tmp.path / "figure_se.csv");
  REQUIRE(run(rep_args).code == kExitOk);
  CHECK(before == slurp(tmp.path / "replication_n600.json") + slurp(tmp.path / "replicates_n600.csv") +
                      slurp(tmp.path / "figure_se.csv"));
  CHECK(read_json(tmp.path / "manifest.json")["config"]["error_sd"] == 1.0);
}

TEST_CASE("custom scenario file") {
  TempDir tmp("custom");
  Scenario s = builtin_scenario("j5-continuous");
  s.name = "mine";
  s.error_sd = 2.0;
  {
    std::ofstream f(tmp.path / "mine.json");
    f << nlohmann::json(s).dump(2);
  }
  REQUIRE(run({"simulate", "--scenario", (tmp.path / "mine.json").string(), "--truth", "--seed", "2",
               "--superpop-n", "1000", "--out", tmp.path.string()})
              .code == kExitOk);
  const auto t = read_json(tmp.path / "truth.json");
  CHECK(t["truth"]["components"]["residual"].get<double>() == doctest::Approx(4.0));
  CHECK(t["manifest"]["input_digest"].get<std::string>().size() == 7 + 64);
}

TEST_CASE("installed executable") {
  TempDir tmp("exe");
  const fs::path data = write_sample(tmp.path, 600);
  std::string cmd = std::string(VARDECOMP_BIN) + " decompose --data " + data.string() +
                    " --outcome y --hospital a --group z --covariates x1,x2 --outcome-kind binary --seed 1 --out " +
                    (tmp.path / "e").string() + " > /dev/null";
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(fs::exists(tmp.path / "e.json"));
  const std::string bad = std::string(VARDECOMP_BIN) + " decompose --data " + data.string() + " 2> /dev/null";
  const int status = std::system(bad.c_str());
  CHECK(WEXITSTATUS(status) == 2);
}
