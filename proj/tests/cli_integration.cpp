#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  REQUIRE(os);
  os << text;
}

// run "<env> <cli> <args>" through the shell, capturing streams and exit code
CliResult cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path dir = "cli_test/io";
  fs::create_directories(dir);
  const fs::path out = dir / ("out" + std::to_string(counter));
  const fs::path err = dir / ("err" + std::to_string(counter));
  ++counter;
  std::string cmd;
  if (!env.empty()) cmd += env + " ";
  cmd += SCAN2NUM_CLI_PATH " "s + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

const std::string kConfig = "cli_test/run.cfg";

void write_run_config() {
  write_text(kConfig,
             "[phantom]\n"
             "count = 24\n"
             "dim = 24\n"
             "semi_axis_z = 9\n"
             "semi_axis_y = 10\n"
             "semi_axis_x = 11\n"
             "lesion_radius_min = 1.5\n"
             "lesion_radius_max = 3\n"
             "[data]\n"
             "train_frac = 0.7\n"
             "valid_frac = 0.15\n"
             "test_frac = 0.15\n"
             "[network]\n"
             "input_size = 32\n"
             "num_slices = 2\n"
             "width_factor = 0.0625\n"
             "[train]\n"
             "target = ve\n"
             "batch_size = 4\n"
             "max_iter = 30\n"
             "val_every = 10\n"
             "dropout = 0\n"
             "seed = 11\n"
             "[eval]\n"
             "resamples = 200\n"
             "split = test\n");
}

}  // namespace

TEST_CASE("usage errors exit 1 and help exits 0") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("train --bogus-flag x").code == 1);
  CHECK(cli("gen-phantoms").code == 1);  // --out is required
  CHECK(cli("train --manifest m.csv --out d --target bogus").code == 1);
  CHECK(cli("gen-phantoms --out x --count -3").code == 1);

  const CliResult help = cli("--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("gen-phantoms") != std::string::npos);
  CHECK(help.out.find("densitometry") != std::string::npos);
  const CliResult sub_help = cli("train --help");
  CHECK(sub_help.code == 0);
  CHECK(sub_help.out.find("--manifest") != std::string::npos);
}

TEST_CASE("missing or broken input files exit 2") {
  CHECK(cli("train --manifest cli_test/absent.csv --out cli_test/x").code == 2);
  CHECK(cli("densitometry --volume cli_test/absent.json").code == 2);
  CHECK(cli("attribute --checkpoint cli_test/absent.ckpt --volume v.json --out o.csv").code == 2);
  write_text("cli_test/garbage.cfg", "[train]\nbad_key = 1\n");
  CHECK(cli("train --manifest m.csv --out d --config cli_test/garbage.cfg").code == 1);
  CHECK(cli("train --manifest m.csv --out d --config cli_test/missing.cfg").code == 2);
}

TEST_CASE("the full pipeline runs at desk scale") {
  write_run_config();
  fs::remove_all("cli_test/ds");

  const CliResult gen = cli("gen-phantoms --out cli_test/ds --config "s + kConfig);
  INFO(gen.err);
  REQUIRE(gen.code == 0);
  CHECK(gen.out.find("wrote 24 cases to cli_test/ds") != std::string::npos);
  REQUIRE(fs::exists("cli_test/ds/manifest.csv"));

  fs::remove_all("cli_test/run");
  const CliResult tr = cli(
      "train --manifest cli_test/ds/manifest.csv --out cli_test/run --config "s + kConfig);
  INFO(tr.err);
  REQUIRE(tr.code == 0);
  // the effective protocol is echoed before the first iteration
  CHECK(tr.out.find("batch_size=4 base_lr=0.005 max_iter=30 momentum=0.9 "
                    "weight_decay=0.0005 dropout=0 val_every=10") != std::string::npos);
  CHECK(tr.out.find("finished at iteration 30") != std::string::npos);
  REQUIRE(fs::exists("cli_test/run/best.ckpt"));
  REQUIRE(fs::exists("cli_test/run/last.ckpt"));
  REQUIRE(fs::exists("cli_test/run/train_log.csv"));

  fs::remove_all("cli_test/report");
  const CliResult ev = cli(
      "eval --checkpoint cli_test/run/best.ckpt --manifest cli_test/ds/manifest.csv "
      "--out cli_test/report --config "s + kConfig);
  INFO(ev.err);
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("rho ") != std::string::npos);
  CHECK(fs::exists("cli_test/report/report.json"));
  CHECK(fs::exists("cli_test/report/predictions.csv"));
  CHECK(fs::exists("cli_test/report/confusion.csv"));

  // the checkpoint remembers its target; contradicting it is a data error
  CHECK(cli("eval --checkpoint cli_test/run/best.ckpt --manifest cli_test/ds/manifest.csv "
            "--out cli_test/report2 --target fev1_fvc --config "s + kConfig)
            .code == 4);

  const CliResult at = cli(
      "attribute --checkpoint cli_test/run/best.ckpt --volume cli_test/ds/case_0000.json "
      "--out cli_test/profile.csv");
  INFO(at.err);
  REQUIRE(at.code == 0);
  CHECK(at.out.find("scan score ") != std::string::npos);
  {
    std::ifstream is("cli_test/profile.csv");
    REQUIRE(is);
    std::string line;
    std::getline(is, line);
    CHECK(line == "slice_index,z_position,response");
    int rows = 0;
    std::string last;
    while (std::getline(is, line)) {
      last = line;
      ++rows;
    }
    CHECK(rows == 3);  // two slices plus the whole-scan row
    CHECK(last.rfind("scan,,", 0) == 0);
  }

  const CliResult de = cli("densitometry --volume cli_test/ds/case_0000.json");
  REQUIRE(de.code == 0);
  // fixed six-decimal fraction
  REQUIRE(de.out.size() >= 9);
  CHECK(de.out[1] == '.');
  CHECK(de.out.substr(0, 2).find_first_not_of("01.") == std::string::npos);
  const double dens = std::stod(de.out);
  CHECK(dens >= 0.0);
  CHECK(dens <= 1.0);
  // a threshold below the HU floor catches nothing
  CHECK(cli("densitometry --volume cli_test/ds/case_0000.json --threshold -1101").out ==
        "0.000000\n");
  // one above the ceiling catches everything
  CHECK(cli("densitometry --volume cli_test/ds/case_0000.json --threshold 301").out ==
        "1.000000\n");
}

TEST_CASE("training through the cli is deterministic and thread-count independent") {
  write_run_config();
  REQUIRE(fs::exists("cli_test/ds/manifest.csv"));

  fs::remove_all("cli_test/run_b");
  REQUIRE(cli("train --manifest cli_test/ds/manifest.csv --out cli_test/run_b --config "s +
              kConfig)
              .code == 0);
  CHECK(slurp("cli_test/run_b/best.ckpt") == slurp("cli_test/run/best.ckpt"));
  CHECK(slurp("cli_test/run_b/last.ckpt") == slurp("cli_test/run/last.ckpt"));
  CHECK(slurp("cli_test/run_b/train_log.csv") == slurp("cli_test/run/train_log.csv"));

  fs::remove_all("cli_test/run_t3");
  REQUIRE(cli("train --manifest cli_test/ds/manifest.csv --out cli_test/run_t3 --config "s +
                  kConfig,
              "S2N_THREADS=3")
              .code == 0);
  CHECK(slurp("cli_test/run_t3/last.ckpt") == slurp("cli_test/run/last.ckpt"));

  // --deterministic pins one thread whatever the environment says
  fs::remove_all("cli_test/run_det");
  REQUIRE(cli("train --manifest cli_test/ds/manifest.csv --out cli_test/run_det "
              "--deterministic --config "s + kConfig,
              "S2N_THREADS=3")
              .code == 0);
  CHECK(slurp("cli_test/run_det/last.ckpt") == slurp("cli_test/run/last.ckpt"));

  fs::remove_all("cli_test/report_b");
  REQUIRE(cli("eval --checkpoint cli_test/run/best.ckpt --manifest cli_test/ds/manifest.csv "
              "--out cli_test/report_b --config "s + kConfig)
              .code == 0);
  CHECK(slurp("cli_test/report_b/report.json") == slurp("cli_test/report/report.json"));
  CHECK(slurp("cli_test/report_b/predictions.csv") == slurp("cli_test/report/predictions.csv"));

  // a malformed thread count is a usage error, caught before any work starts
  CHECK(cli("train --manifest cli_test/ds/manifest.csv --out cli_test/run_env --config "s +
                kConfig,
            "S2N_THREADS=zero")
            .code == 1);
}

TEST_CASE("a finished run can be resumed as a no-op and seeds are enforced") {
  write_run_config();
  REQUIRE(fs::exists("cli_test/run/last.ckpt"));

  const CliResult res = cli(
      "train --manifest cli_test/ds/manifest.csv --out cli_test/run "
      "--resume cli_test/run/last.ckpt --config "s + kConfig);
  INFO(res.err);
  REQUIRE(res.code == 0);
  CHECK(res.out.find("finished at iteration 30") != std::string::npos);

  // the same checkpoint under a different seed is rejected
  CHECK(cli("train --manifest cli_test/ds/manifest.csv --out cli_test/run_seed "
            "--resume cli_test/run/last.ckpt --seed 999 --config "s + kConfig)
            .code == 4);
}

TEST_CASE("the slice sweep writes a table and cites the full-scale reference") {
  write_run_config();
  REQUIRE(fs::exists("cli_test/ds/manifest.csv"));
  fs::remove_all("cli_test/sweep.csv");
  const CliResult ex = cli(
      "slice-experiment --manifest cli_test/ds/manifest.csv --counts 2,3 "
      "--out cli_test/sweep.csv --config "s + kConfig);
  INFO(ex.err);
  REQUIRE(ex.code == 0);
  CHECK(ex.out.find("full-scale study reference rho by slice count: "
                    "8: 0.78, 12: 0.79, 16: 0.82, 24: 0.81") != std::string::npos);
  REQUIRE(fs::exists("cli_test/sweep.csv"));
  std::ifstream is("cli_test/sweep.csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "num_slices,rho,ci_lo,ci_hi");
  std::getline(is, line);
  CHECK(line.rfind("2,", 0) == 0);
  std::getline(is, line);
  CHECK(line.rfind("3,", 0) == 0);
}

TEST_CASE("gen-phantoms honors count and seed overrides") {
  write_run_config();
  fs::remove_all("cli_test/ds_small");
  const CliResult gen = cli(
      "gen-phantoms --out cli_test/ds_small --count 6 --seed 5 --config "s + kConfig);
  REQUIRE(gen.code == 0);
  CHECK(gen.out.find("wrote 6 cases") != std::string::npos);

  fs::remove_all("cli_test/ds_small2");
  REQUIRE(cli("gen-phantoms --out cli_test/ds_small2 --count 6 --seed 5 --config "s + kConfig)
              .code == 0);
  CHECK(slurp("cli_test/ds_small2/manifest.csv") == slurp("cli_test/ds_small/manifest.csv"));
  CHECK(slurp("cli_test/ds_small2/case_0003.raw") == slurp("cli_test/ds_small/case_0003.raw"));
}
