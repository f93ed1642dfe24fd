#include "canf/commands.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <sys/wait.h>

using namespace canf;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "canf_unit_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(CANF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
  const fs::path p = root() / name;
  std::ofstream(p) << j.dump(1);
  return p;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
  if (files.empty()) return false;
  for (const auto& f : files)
    if (!fs::exists(b / f) || slurp(a / f) != slurp(b / f)) return false;
  return true;
}

double sinusoid(int t) { return 2.0 + std::sin(2.0 * M_PI * (t + 0.3) / 24.0); }

}  // namespace

TEST_CASE("cli: usage and error exit codes") {
  CHECK(run("--help") == 0);
  CHECK(run("fit --strategy bogus --out " + (root() / "bogus").string()) == 2);
  CHECK(run("fit --csv " + (root() / "missing.csv").string() + " --out " + (root() / "nodata").string()) == 3);
  CHECK(run("fit --D 20 --out " + (root() / "badD").string()) == 2);
  std::ofstream(root() / "broken.json") << "{ not json";
  CHECK(run("fit --config " + (root() / "broken.json").string()) == 2);
  CHECK(run("frobnicate") == 2);
}

TEST_CASE("cli: synth is reproducible") {
  const auto a = root() / "synth_a", b = root() / "synth_b";
  REQUIRE(run("synth --seed 4 --out " + a.string()) == 0);
  REQUIRE(run("synth --seed 4 --out " + b.string()) == 0);
  CHECK(fs::exists(a / "run.json"));
  const auto csv = a / "dumps" / "synthetic_load.csv";
  REQUIRE(fs::exists(csv));
  CHECK(slurp(csv) == slurp(b / "dumps" / "synthetic_load.csv"));
  CHECK(load_csv(csv.string()).values.size() == 52 * kHoursPerWeek);
}

TEST_CASE("cli: fit, schedule, forecast and evaluate on a deterministic signal") {
  LoadSeries s;
  s.start = "2021-03-01T00:00:00";
  for (int t = 0; t < 8 * 168; ++t) s.values.push_back(sinusoid(t));
  const auto data = root() / "sine.csv";
  write_csv(s, data.string());
  const auto cfg = write_config("sine.json", {{"strategies", {"cg"}}, {"data", {{"csv", data.string()}}}});
  const auto out = root() / "fit_sine";
  REQUIRE(run("fit --config " + cfg.string() + " --out " + out.string()) == 0);
  const auto bundle = out / "models" / "seed_0" / "cg";
  CHECK(fs::exists(bundle / "gaussian.json"));
  CHECK(fs::exists(out / "run.json"));

  std::ofstream win(root() / "window.csv");
  win << "load_kwh\n";
  for (int t = 0; t < 8; ++t) win << sinusoid(t) << '\n';
  win.close();
  const std::string common = " --bundle " + bundle.string() + " --window " + (root() / "window.csv").string();

  std::vector<int> order(12);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [](int a, int b) { return sinusoid(8 + a) < sinusoid(8 + b); });
  std::vector<int> want{order[0] + 1, order[1] + 1, order[2] + 1};
  std::sort(want.begin(), want.end());

  const auto s1 = root() / "sched1", s2 = root() / "sched2", s3 = root() / "sched3";
  REQUIRE(run("schedule --D 3" + common + " --out " + s1.string()) == 0);
  REQUIRE(run("schedule --D 3" + common + " --out " + s2.string()) == 0);
  const auto j1 = nlohmann::json::parse(slurp(s1 / "reports" / "schedule.json"));
  CHECK(j1["indices"].get<std::vector<int>>() == want);
  CHECK(slurp(s1 / "reports" / "schedule.json") == slurp(s2 / "reports" / "schedule.json"));
  REQUIRE(run("schedule --D 12" + common + " --out " + s3.string()) == 0);
  const auto j3 = nlohmann::json::parse(slurp(s3 / "reports" / "schedule.json"));
  std::vector<int> all(12);
  std::iota(all.begin(), all.end(), 1);
  CHECK(j3["indices"].get<std::vector<int>>() == all);

  std::ofstream short_win(root() / "short.csv");
  short_win << "load_kwh\n1\n2\n";
  short_win.close();
  CHECK(run("schedule --bundle " + bundle.string() + " --window " + (root() / "short.csv").string() +
            " --out " + (root() / "sched_bad").string()) == 2);

  const auto fo = root() / "forecast";
  REQUIRE(run("forecast" + common + " --out " + fo.string()) == 0);
  const auto fj = nlohmann::json::parse(slurp(fo / "reports" / "forecast.json"));
  CHECK(fj["steps"].size() == 12);
  CHECK(std::abs(fj["steps"][0]["mean"].get<double>() - sinusoid(8)) < 1e-2);
  CHECK(fs::exists(fo / "dumps" / "forecast_samples.csv"));

  const auto ev = root() / "eval_twice";
  REQUIRE(run("evaluate --config " + cfg.string() + " --m 50 --bundle " + bundle.string() + " --bundle " +
              bundle.string() + " --out " + ev.string()) == 0);
  std::ifstream table(ev / "reports" / "comparison.csv");
  std::string header, r1, r2;
  std::getline(table, header);
  std::getline(table, r1);
  std::getline(table, r2);
  REQUIRE(r1.find(',') != std::string::npos);
  CHECK(r1.substr(r1.find(',')) == r2.substr(r2.find(',')));
  CHECK(r1.rfind("cg,", 0) == 0);
  CHECK(r2.rfind("cg_2,", 0) == 0);
}

TEST_CASE("cli: toy runs are byte-identical") {
  nlohmann::json toy{{"train_points", 300},
                     {"validation_points", 100},
                     {"k_candidates", {1, 2, 3}},
                     {"flow", {{"epochs", 40}, {"validation_interval", 5}}},
                     {"anf_samples", 2000},
                     {"anf_components", 5},
                     {"kl_samples", 5000},
                     {"grid_points", 11}};
  const auto cfg = write_config("toy.json", {{"experiment", "toy"}, {"seeds", {42}}, {"toy", toy}});
  const auto a = root() / "toy_a", b = root() / "toy_b";
  REQUIRE(run("toy --config " + cfg.string() + " --out " + a.string()) == 0);
  REQUIRE(run("toy --config " + cfg.string() + " --out " + b.string()) == 0);
  CHECK(fs::exists(a / "reports" / "toy_seed_42.json"));
  CHECK(fs::exists(a / "reports" / "toy_summary.json"));
  CHECK(fs::exists(a / "dumps" / "toy_grid_seed_42.csv"));
  CHECK(same_tree(a / "reports", b / "reports"));
  CHECK(same_tree(a / "models", b / "models"));
}

TEST_CASE("cli: toy-scale CANF fit finishes within five minutes") {
  ForecasterConfig canf;
  canf.strategy = Strategy::kCanf;
  canf.flow = FlowTrainConfig{4, {12, 12}, 200, 128, 1e-3, 20, 5.0, 1};
  canf.anf_samples = 10000;
  canf.anf_components = 10;
  const auto cfg = write_config("canf_small.json", {{"strategies", {canf}}});
  const auto start = std::chrono::steady_clock::now();
  const auto out = root() / "canf_small";
  REQUIRE(run("fit --config " + cfg.string() + " --out " + out.string()) == 0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("toy-scale CANF fit took " << seconds << " s");
  CHECK(seconds < 300.0);
  CHECK(fs::exists(out / "models" / "seed_0" / "canf" / "flow.json"));
  CHECK(fs::exists(out / "models" / "seed_0" / "canf" / "mixture.json"));
}

TEST_CASE("config: shipped files validate; overrides win") {
  for (const char* name : {"toy.json", "benchmark.json"}) {
    const RunConfig c = load_run_config((fs::path(CANF_CONFIG_DIR) / name).string());
    CHECK_NOTHROW(c.validate());
    CHECK(c.seeds.size() == 10);
  }
  RunConfig c = load_run_config((fs::path(CANF_CONFIG_DIR) / "benchmark.json").string());
  Overrides o;
  o.seed = 5;
  o.K = 6;
  o.D = 2;
  o.strategy = "canf";
  apply_overrides(c, o);
  CHECK(c.seeds == std::vector<std::uint64_t>{5});
  REQUIRE(c.strategies.size() == 1);
  CHECK(c.strategies[0].strategy == Strategy::kCanf);
  CHECK(c.strategies[0].K == 6);
  CHECK(c.strategies[0].anf_samples == 40000);

  const nlohmann::json j = c;
  RunConfig back = j.get<RunConfig>();
  CHECK(nlohmann::json(back).dump() == j.dump());

  RunConfig bad;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}
