#include <catch2/catch_amalgamated.hpp>

#include <charter/cli.hpp>
#include <charter/config.hpp>

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace charter;
using Catch::Approx;

namespace {

namespace fs = std::filesystem;

// Redirects a stream into a buffer for the lifetime of the object.
class CaptureStream {
 public:
  explicit CaptureStream(std::ostream& os) : os_(os), old_(os.rdbuf(buf_.rdbuf())) {}
  ~CaptureStream() { os_.rdbuf(old_); }
  std::string text() const { return buf_.str(); }

 private:
  std::ostream& os_;
  std::stringstream buf_;
  std::streambuf* old_;
};

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("charter_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

TEST_CASE("config text parsing: grammar and rejects") {
  auto kv = parse_config_text(
      "# leading comment\n"
      "run.d = 3   # trailing comment\n"
      "\n"
      "  seeds = 1, 2, 3\n"
      "out = a/b.csv\n");
  REQUIRE(kv.size() == 3);
  CHECK(kv.at("run.d") == "3");
  CHECK(kv.at("seeds") == "1, 2, 3");
  CHECK(kv.at("out") == "a/b.csv");

  CHECK_THROWS_AS(parse_config_text("run.d 3\n"), ConfigRejected);
  CHECK_THROWS_AS(parse_config_text("run.d =\n"), ConfigRejected);
  CHECK_THROWS_AS(parse_config_text(" = 3\n"), ConfigRejected);
  CHECK_THROWS_AS(parse_config_text("run.d = 3\nrun.d = 4\n"), ConfigRejected);
}

TEST_CASE("scalar and list value parsers") {
  CHECK(parse_double_value("k", "0.5") == 0.5);
  CHECK(std::isinf(parse_double_value("k", "inf")));
  CHECK(std::isinf(parse_double_value("k", "Inf")));
  CHECK_THROWS_AS(parse_double_value("k", "x"), ConfigRejected);
  CHECK_THROWS_AS(parse_double_value("k", "1.5x"), ConfigRejected);

  CHECK(parse_int_value("k", "42") == 42);
  CHECK_THROWS_AS(parse_int_value("k", "4.2"), ConfigRejected);

  CHECK(parse_bool_value("k", "true"));
  CHECK(parse_bool_value("k", "1"));
  CHECK_FALSE(parse_bool_value("k", "false"));
  CHECK_FALSE(parse_bool_value("k", "0"));
  CHECK_THROWS_AS(parse_bool_value("k", "yes"), ConfigRejected);

  auto list = parse_list_value<std::int64_t>("k", "1, 2,3", parse_int_value);
  CHECK(list == std::vector<std::int64_t>{1, 2, 3});
  CHECK_THROWS_AS(parse_list_value<std::int64_t>("k", "1,,2", parse_int_value),
                  ConfigRejected);
}

TEST_CASE("experiment config covers every key and rejects unknown ones") {
  ExperimentConfig cfg = parse_experiment_config(
      "problem.key = hard_instance\n"
      "problem.alpha = 2.5\n"
      "problem.sigma_g = 0.7\n"
      "problem.sigma_f = 0.3\n"
      "problem.seed = 9\n"
      "run.d = 5\n"
      "run.M = 6\n"
      "run.N = 4096\n"
      "run.R = 4\n"
      "privacy.eps = inf\n"
      "privacy.delta = 1e-6\n"
      "privacy.delta_err = 0.05\n"
      "vaidya.gamma = 0.1\n"
      "vaidya.eta = 0.5\n"
      "vaidya.center_tol = 1e-9\n"
      "vaidya.max_rows = 128\n"
      "seeds = 3, 5\n"
      "out = x.csv\n"
      "baseline = true\n"
      "override_n_floor = true\n"
      "dpsgd.rounds = 250\n"
      "dpsgd.step0 = 0.25\n"
      "dpsgd.batch = 16\n"
      "sweep.d = 2, 3\n"
      "sweep.N = 100, 200\n"
      "sweep.M = 1, 2\n"
      "sweep.eps = 0.1, inf\n");

  CHECK(cfg.problem.key == "hard_instance");
  CHECK(cfg.problem.alpha == 2.5);
  CHECK(cfg.problem.sigma_g == 0.7);
  CHECK(cfg.problem.sigma_f == 0.3);
  CHECK(cfg.problem.seed == 9);
  CHECK(cfg.d == 5);
  CHECK(cfg.M == 6);
  CHECK(cfg.N == 4096);
  CHECK(cfg.R == 4.0);
  CHECK(std::isinf(cfg.privacy.eps_dp));
  CHECK(cfg.privacy.delta_dp == 1e-6);
  CHECK(cfg.privacy.delta_err == 0.05);
  CHECK(cfg.vaidya.gamma == 0.1);
  CHECK(cfg.vaidya.eta == 0.5);
  CHECK(cfg.vaidya.center_tol == 1e-9);
  CHECK(cfg.vaidya.max_rows == 128);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 5});
  CHECK(cfg.out == "x.csv");
  CHECK(cfg.baseline);
  CHECK(cfg.override_n_floor);
  CHECK(cfg.dpsgd.rounds == 250);
  CHECK(cfg.dpsgd.step0 == 0.25);
  CHECK(cfg.dpsgd.batch == 16);
  CHECK(cfg.sweep_d == std::vector<int>{2, 3});
  CHECK(cfg.sweep_n == std::vector<std::int64_t>{100, 200});
  CHECK(cfg.sweep_m == std::vector<int>{1, 2});
  REQUIRE(cfg.sweep_eps.size() == 2);
  CHECK(cfg.sweep_eps[0] == 0.1);
  CHECK(std::isinf(cfg.sweep_eps[1]));

  CHECK_THROWS_AS(parse_experiment_config("run.zz = 1\n"), ConfigRejected);
  // Defaults when keys are absent.
  ExperimentConfig def = parse_experiment_config("run.d = 2\n");
  CHECK(def.problem.key == "max_abs");
  CHECK(def.seeds == std::vector<std::uint64_t>{1});
  CHECK_FALSE(def.baseline);
}

TEST_CASE("run ids are stable 16-digit hashes sensitive to every input") {
  std::string a = make_run_id("max_abs", 2, 1, 100, 0.5, 7, "charter");
  CHECK(a.size() == 16);
  for (char c : a) CHECK(std::isxdigit(static_cast<unsigned char>(c)));
  CHECK(a == make_run_id("max_abs", 2, 1, 100, 0.5, 7, "charter"));
  CHECK(a != make_run_id("max_abs", 2, 1, 100, 0.5, 8, "charter"));
  CHECK(a != make_run_id("max_abs", 2, 1, 100, 0.5, 7, "dpsgd"));
  double inf = std::numeric_limits<double>::infinity();
  CHECK(a != make_run_id("max_abs", 2, 1, 100, inf, 7, "charter"));
}

TEST_CASE("result row serialization") {
  std::vector<std::string> header = split_fields(kResultCsvHeader);
  CHECK(header.size() == 16);
  CHECK(header.front() == "run_id");
  CHECK(header.back() == "algo");

  ResultRow r;
  r.run_id = "abc";
  r.seed = 7;
  r.problem = "max_abs";
  r.d = 2;
  r.M = 3;
  r.N = 100;
  r.eps = 0.5;
  r.delta = 1e-5;
  r.K = 10;
  r.J0 = 9;
  r.J1 = 8;
  r.cc_bits = 1234.5;
  r.k_star = 4;
  r.wall_ms = 12.5;
  r.algo = "charter";
  CHECK(to_csv(r) == "abc,7,max_abs,2,3,100,0.5,1e-05,10,9,8,1234.5,4,na,12.5,charter");

  r.eps = std::numeric_limits<double>::infinity();
  r.excess_risk = 0.25;
  CHECK(to_csv(r) == "abc,7,max_abs,2,3,100,inf,1e-05,10,9,8,1234.5,4,0.25,12.5,charter");
  CHECK(format_eps(r.eps) == "inf");
}

TEST_CASE("median and interquartile range on sorted samples") {
  // [DERIVED] order statistics recomputed independently by hand
  CHECK(cli::median_of_sorted({1, 2, 3, 4}) == 2.5);
  CHECK(cli::iqr_of_sorted({1, 2, 3, 4}) == Approx(1.5).margin(1e-15));
  CHECK(cli::median_of_sorted({1, 2, 3, 4, 10}) == 3.0);
  CHECK(cli::iqr_of_sorted({1, 2, 3, 4, 10}) == Approx(2.0).margin(1e-15));
  CHECK(cli::median_of_sorted({7}) == 7.0);
  CHECK(cli::iqr_of_sorted({7}) == 0.0);
}

TEST_CASE("transcript paths replace the extension next to the stem") {
  CHECK(cli::transcript_path("results.csv", 7) == "results.seed7.transcript.txt");
  CHECK(cli::transcript_path("dir.x/results", 3) ==
        "dir.x/results.seed3.transcript.txt");
  CHECK(cli::transcript_path("a/b/out.csv", 1) == "a/b/out.seed1.transcript.txt");
}

TEST_CASE("worker count respects the thread env override and job count") {
  setenv("CHARTER_THREADS", "3", 1);
  CHECK(cli::worker_count(8) == 3);
  CHECK(cli::worker_count(2) == 2);
  CHECK(cli::worker_count(0) == 1);
  setenv("CHARTER_THREADS", "junk", 1);
  CHECK(cli::worker_count(8) >= 1);
  unsetenv("CHARTER_THREADS");
  CHECK(cli::worker_count(1) == 1);
}

TEST_CASE("sweep cells expand the cartesian grid in declaration order") {
  ExperimentConfig cfg;
  cfg.d = 9;
  cfg.M = 4;
  cfg.N = 77;
  cfg.sweep_d = {2, 3};
  cfg.sweep_eps = {0.1, std::numeric_limits<double>::infinity()};
  auto cells = cli::sweep_cells(cfg);
  REQUIRE(cells.size() == 4);
  CHECK(cells[0].d == 2);
  CHECK(cells[0].M == 4);
  CHECK(cells[0].N == 77);
  CHECK(cells[0].eps == 0.1);
  CHECK(std::isinf(cells[1].eps));
  CHECK(cells[2].d == 3);
  CHECK(cells[3].d == 3);
}

TEST_CASE("cli validate-params prints the derived block") {
  // [DERIVED] K/J0/J1 for (d=4, M=4, N=768, gamma=0.2, non-private)
  // recomputed independently in extended precision
  CaptureStream out(std::cout);
  int rc = cli::dispatch({"validate-params", "--d", "4", "--M", "4", "--N",
                          "768", "--gamma", "0.2", "--eps", "inf"});
  CHECK(rc == 0);
  std::string text = out.text();
  CHECK(text.find("K = 561\n") != std::string::npos);
  CHECK(text.find("J0 = 9\n") != std::string::npos);
  CHECK(text.find("J1 = 9\n") != std::string::npos);
  CHECK(text.find("batch = 1\n") != std::string::npos);
  CHECK(text.find("cc_bits = 25254\n") != std::string::npos);
  CHECK(text.find("n_floor = ") != std::string::npos);
  CHECK(text.find("ledger = none (non-private mode)\n") != std::string::npos);
}

TEST_CASE("cli validate-params prints the privacy ledger when finite") {
  // [DERIVED] fixture (d=3, M=4, N=65536, gamma=0.5, eps=0.05, delta=1e-5,
  // delta_err=0.1) recomputed independently in extended precision
  CaptureStream out(std::cout);
  int rc = cli::dispatch({"validate-params", "--d", "3", "--M", "4", "--N",
                          "65536", "--gamma", "0.5", "--eps", "0.05",
                          "--delta", "1e-5", "--delta-err", "0.1"});
  CHECK(rc == 0);
  std::string text = out.text();
  CHECK(text.find("K = 193\n") != std::string::npos);
  CHECK(text.find("J0 = 17\n") != std::string::npos);
  CHECK(text.find("J1 = 14\n") != std::string::npos);
  CHECK(text.find("sigma0_sq = 117.7295") != std::string::npos);
  CHECK(text.find("ledger.eps_learning = 0.0113034450779") != std::string::npos);
  CHECK(text.find("ledger.eps_verification = 0.0370207893327") !=
        std::string::npos);
  CHECK(text.find("ledger.delta_verification = ") != std::string::npos);
}

TEST_CASE("cli run writes the results file and per-seed transcripts") {
  fs::path dir = fresh_dir("run");
  fs::path out_csv = dir / "results.csv";
  write_file(dir / "run.conf",
             "problem.key = max_abs\n"
             "problem.sigma_g = 0.5\n"
             "problem.sigma_f = 0.5\n"
             "run.d = 2\n"
             "run.M = 1\n"
             "run.N = 120\n"
             "privacy.eps = inf\n"
             "vaidya.gamma = 0.15\n"
             "seeds = 1, 2\n"
             "override_n_floor = true\n"
             "out = " + out_csv.string() + "\n");

  int rc = cli::dispatch({"run", "--config", (dir / "run.conf").string()});
  REQUIRE(rc == 0);

  auto lines = split_lines(read_file(out_csv));
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "# charter-results v1");
  CHECK(lines[1] == kResultCsvHeader);
  double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 2; i < lines.size(); ++i) {
    auto f = split_fields(lines[i]);
    REQUIRE(f.size() == 16);
    std::uint64_t seed = i - 1;  // seeds 1, 2 in order
    CHECK(f[0] == make_run_id("max_abs", 2, 1, 120, inf, seed, "charter"));
    CHECK(f[1] == std::to_string(seed));
    CHECK(f[2] == "max_abs");
    CHECK(f[6] == "inf");
    CHECK(f[15] == "charter");
    CHECK(std::stod(f[13]) >= 0.0);  // excess risk present for max_abs
  }

  for (std::uint64_t seed : {1, 2}) {
    std::string t = read_file(cli::transcript_path(out_csv.string(), seed));
    CHECK(t.rfind("# charter-transcript v1\n", 0) == 0);
    CHECK(t.find("summary k_star=") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli sweep runs the grid and aggregates per cell") {
  fs::path dir = fresh_dir("sweep");
  fs::path out_csv = dir / "sweep.csv";
  std::string conf =
      "problem.key = max_abs\n"
      "problem.sigma_g = 0.5\n"
      "problem.sigma_f = 0.5\n"
      "run.d = 2\n"
      "run.M = 1\n"
      "privacy.eps = inf\n"
      "vaidya.gamma = 0.15\n"
      "seeds = 1, 2\n"
      "override_n_floor = true\n"
      "sweep.N = 120, 240\n"
      "out = " + out_csv.string() + "\n";
  write_file(dir / "sweep.conf", conf);

  setenv("CHARTER_THREADS", "2", 1);
  int rc = cli::dispatch({"sweep", "--config", (dir / "sweep.conf").string()});
  unsetenv("CHARTER_THREADS");
  REQUIRE(rc == 0);

  auto lines = split_lines(read_file(out_csv));
  REQUIRE(lines.size() == 6);  // banner + header + 2 cells x 2 seeds
  int n120 = 0, n240 = 0;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (lines[i].find(",max_abs,2,1,120,inf,") != std::string::npos) ++n120;
    if (lines[i].find(",max_abs,2,1,240,inf,") != std::string::npos) ++n240;
  }
  CHECK(n120 == 2);
  CHECK(n240 == 2);

  auto agg = split_lines(read_file(out_csv.string() + ".agg.csv"));
  REQUIRE(agg.size() == 3);
  CHECK(agg[0] == "problem,d,M,N,eps,algo,runs,er_median,er_iqr");
  CHECK(agg[1].rfind("max_abs,2,1,120,inf,charter,2,", 0) == 0);
  CHECK(agg[2].rfind("max_abs,2,1,240,inf,charter,2,", 0) == 0);

  // The same config is invalid for `run`: sweeps belong to `sweep`.
  CaptureStream err(std::cerr);
  int rc2 = cli::dispatch({"run", "--config", (dir / "sweep.conf").string()});
  CHECK(rc2 == 1);
  CHECK(err.text().find("ConfigRejected") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli bench-vaidya reports a non-increasing running minimum") {
  CaptureStream out(std::cout);
  int rc = cli::dispatch({"bench-vaidya", "--problem", "max_abs", "--d", "2",
                          "--K", "30", "--eps", "inf"});
  REQUIRE(rc == 0);
  std::string text = out.text();
  REQUIRE(text.rfind("iter,running_min_excess_risk\n", 0) == 0);
  CHECK(text.find("wall_ms=") != std::string::npos);

  std::vector<double> mins;
  for (const auto& line : split_lines(text)) {
    if (line.rfind("iter,", 0) == 0 || line.rfind("wall_ms=", 0) == 0) continue;
    auto f = split_fields(line);
    REQUIRE(f.size() == 2);
    mins.push_back(std::stod(f[1]));
  }
  REQUIRE(mins.size() >= 2);
  for (std::size_t i = 1; i < mins.size(); ++i) CHECK(mins[i] <= mins[i - 1]);
  CHECK(mins.back() < 0.2);
}

TEST_CASE("cli error rendering and exit codes") {
  {
    CaptureStream err(std::cerr);
    CaptureStream out(std::cout);
    CHECK(cli::dispatch({"run", "--nope"}) != 0);
  }
  {
    CaptureStream err(std::cerr);
    CaptureStream out(std::cout);
    CHECK(cli::dispatch({}) != 0);
  }
  {
    CaptureStream err(std::cerr);
    CaptureStream out(std::cout);
    int rc = cli::dispatch({"run", "--problem", "nope", "--d", "2", "--M", "1",
                            "--N", "120", "--gamma", "0.15", "--eps", "inf",
                            "--override-n-floor"});
    CHECK(rc == 1);
    CHECK(err.text().find("UnknownProblem") != std::string::npos);
  }
  {
    CaptureStream err(std::cerr);
    int rc = cli::dispatch({"run", "--config", "/nonexistent/x.conf"});
    CHECK(rc == 1);
    CHECK(err.text().find("cannot open") != std::string::npos);
  }
}
