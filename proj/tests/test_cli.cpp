#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tbn/data.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = TBN_CLI_PATH;

struct RunResult {
  int exit_code;
  std::string stdout_text;
};

fs::path work_dir() {
  static fs::path dir = [] {
    auto d = fs::temp_directory_path() / "tbn_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run(const std::string& args) {
  fs::path out = work_dir() / "stdout.txt";
  std::string cmd = kCli + " " + args + " > " + out.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(rc), ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synth writes a dataset directory deterministically") {
  fs::path d1 = work_dir() / "synth1";
  fs::path d2 = work_dir() / "synth2";
  RunResult a = run("synth --poly p1 --d 4 --noise 0.05 --seed 7 --out " +
                    d1.string());
  REQUIRE(a.exit_code == 0);
  RunResult b = run("synth --poly p1 --d 4 --noise 0.05 --seed 7 --out " +
                    d2.string());
  REQUIRE(b.exit_code == 0);

  tbn::Dataset ds = tbn::load_dataset(d1);
  CHECK(ds.n_rows == 600);
  CHECK(ds.n_features == 4);
  CHECK(!ds.y_clean.empty());

  CHECK(slurp(d1 / "X.bin") == slurp(d2 / "X.bin"));
  CHECK(slurp(d1 / "y.bin") == slurp(d2 / "y.bin"));
  CHECK(slurp(d1 / "meta.json") == slurp(d2 / "meta.json"));
}

TEST_CASE("synth without a polynomial is a usage error") {
  RunResult r = run("synth --out " + (work_dir() / "x").string());
  CHECK(r.exit_code == 1);
}

TEST_CASE("unknown flags and missing subcommands exit 1") {
  CHECK(run("").exit_code == 1);
  CHECK(run("synth --nope 3 --out /tmp/x").exit_code == 1);
  CHECK(run("frobnicate").exit_code == 1);
}

TEST_CASE("regress recovers the quadratic and is reproducible") {
  fs::path data = work_dir() / "regress_data";
  REQUIRE(run("synth --poly p1 --d 2 --n 200 --seed 5 --out " + data.string())
              .exit_code == 0);

  fs::path o1 = work_dir() / "reg1";
  fs::path o2 = work_dir() / "reg2";
  std::string flags = "regress --data " + data.string() +
                      " --preset supplementary --set population_size=300"
                      " --set max_generations=40 --seed 3 --out ";
  RunResult a = run(flags + o1.string());
  REQUIRE(a.exit_code == 0);
  CHECK(a.stdout_text.find("6(x⊙x)^T") != std::string::npos);
  RunResult b = run(flags + o2.string());
  REQUIRE(b.exit_code == 0);
  CHECK(slurp(o1 / "formula.json") == slurp(o2 / "formula.json"));

  nlohmann::json j = nlohmann::json::parse(slurp(o1 / "formula.json"));
  CHECK(j["formula"] == "6(x⊙x)^T");
  CHECK(j["template"]["terms"]["2"].get<double>() == 6.0);
}

TEST_CASE("regress rejects unknown override keys") {
  fs::path data = work_dir() / "regress_data";
  RunResult r = run("regress --data " + data.string() +
                    " --set not_a_key=1 --out " + (work_dir() / "x").string());
  CHECK(r.exit_code == 1);
}

TEST_CASE("train runs on a template, checkpoints, and resumes") {
  fs::path data = work_dir() / "train_data";
  REQUIRE(run("synth --poly p1 --d 4 --n 200 --seed 9 --split 0.8,0.2 "
              "--split-seed 2 --out " +
              data.string())
              .exit_code == 0);

  fs::path full = work_dir() / "train_full";
  std::string base = "train --data " + data.string() +
                     " --template \"6(x⊙x)^T\" --net 1 "
                     "--set epochs=20 --set learning_rate=0.005 --seed 11 ";
  RunResult a = run(base + "--out " + full.string());
  REQUIRE(a.exit_code == 0);
  CHECK(fs::exists(full / "checkpoint.json"));
  CHECK(fs::exists(full / "history.csv"));

  // Half the epochs, then resume to the same total.
  fs::path half = work_dir() / "train_half";
  std::string half_base = "train --data " + data.string() +
                          " --template \"6(x⊙x)^T\" --net 1 "
                          "--set epochs=10 --set learning_rate=0.005 --seed 11 ";
  REQUIRE(run(half_base + "--out " + half.string()).exit_code == 0);
  fs::path resumed = work_dir() / "train_resumed";
  RunResult c = run("train --data " + data.string() + " --resume " +
                    (half / "checkpoint.json").string() +
                    " --set epochs=20 --set learning_rate=0.005 --seed 11 "
                    "--out " +
                    resumed.string());
  REQUIRE(c.exit_code == 0);

  nlohmann::json m1 =
      nlohmann::json::parse(slurp(full / "checkpoint.json"))["model"];
  nlohmann::json m2 =
      nlohmann::json::parse(slurp(resumed / "checkpoint.json"))["model"];
  CHECK(m1 == m2);
}

TEST_CASE("train rejects an invalid layer spec") {
  fs::path data = work_dir() / "train_data";
  RunResult r =
      run("train --data " + data.string() +
          " --kind linear --net 0-1 --out " + (work_dir() / "x").string());
  CHECK(r.exit_code == 1);
}

TEST_CASE("bench and report round trip") {
  fs::path cfg_path = work_dir() / "exp.json";
  nlohmann::json cfg = {
      {"name", "cli-p1"},
      {"dataset",
       {{"synthetic",
         {{"poly", "p1"}, {"d", 2}, {"n_points", 120}, {"seed", 11}}}}},
      {"split", {0.8, 0.2}},
      {"split_seed", 3},
      {"gp",
       {{"preset", "supplementary"},
        {"population_size", 150},
        {"max_generations", 10},
        {"tournament_fraction", 0.05}}},
      {"repeats", 2},
      {"base_seed", 500},
      {"train", {{"epochs", 15}, {"learning_rate", 0.005}}},
      {"arms",
       nlohmann::json::array(
           {{{"name", "TN"},
             {"kind", "task_poly"},
             {"structure", "1"},
             {"pair", "LN"}},
            {{"name", "LN"}, {"kind", "linear"}, {"structure", "2-1"}}})}};
  std::ofstream(cfg_path) << cfg.dump(2);

  fs::path out = work_dir() / "bench_out";
  RunResult r = run("bench --config " + cfg_path.string() + " --out " +
                    out.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.stdout_text.find("| TN |") != std::string::npos);
  REQUIRE(fs::exists(out / "archive.json"));

  fs::path rep = work_dir() / "report_out";
  RunResult rr = run("report --archive " + (out / "archive.json").string() +
                     " --out " + rep.string());
  REQUIRE(rr.exit_code == 0);
  CHECK(slurp(rep / "report.md") == slurp(out / "report.md"));
  CHECK(slurp(rep / "report.csv") == slurp(out / "report.csv"));
}

TEST_CASE("corrupt archives are a config error") {
  fs::path bad = work_dir() / "bad.json";
  std::ofstream(bad) << "{ not json";
  RunResult r = run("report --archive " + bad.string() + " --out " +
                    (work_dir() / "x").string());
  CHECK(r.exit_code == 1);

  fs::path wrong = work_dir() / "wrong.json";
  std::ofstream(wrong) << "{\"unexpected\": true}";
  RunResult r2 = run("report --archive " + wrong.string() + " --out " +
                     (work_dir() / "x").string());
  CHECK(r2.exit_code == 1);
}
