// End-to-end exercise of the CLI binary: simulate -> moments -> fit ->
// summarize, plus seed determinism of the written files. The binary path
// arrives via the INCVOL_BIN environment variable set by CMake.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* p = std::getenv("INCVOL_BIN");
  REQUIRE(p != nullptr);
  return p;
}

fs::path workdir() {
  const char* p = std::getenv("INCVOL_TMP");
  REQUIRE(p != nullptr);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  return std::system((bin() + " " + args + " > /dev/null 2>&1").c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(f, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("simulate -> moments -> fit -> summarize pipeline") {
  auto dir = workdir();
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto out = (dir / "run").string();

  REQUIRE(run("simulate --seed 3 --out " + out +
              " --set sim_n=20 --set sim_t=10") == 0);
  // Row count = header + N x T.
  CHECK(line_count(dir / "run" / "panel.csv") == 1 + 20 * 10);
  CHECK(fs::exists(dir / "run" / "truth.csv"));

  REQUIRE(run("moments --input " + out + "/panel.csv --out " + out) == 0);
  CHECK(fs::exists(dir / "run" / "moments.csv"));
  CHECK(fs::exists(dir / "run" / "cohorts.csv"));
  CHECK(fs::exists(dir / "run" / "trends.csv"));

  REQUIRE(run("fit --input " + out + "/panel.csv --out " + out +
              " --seed 5 --threads 2 --set n_iter=40 --set burn_in=20 "
              "--set n_chains=2") == 0);
  CHECK(fs::exists(dir / "run" / "chain_0_sigma.csv"));
  CHECK(fs::exists(dir / "run" / "chain_1_coeffs.csv"));
  auto manifest = slurp(dir / "run" / "manifest.txt");
  CHECK(manifest.find("seed=5") != std::string::npos);
  CHECK(manifest.find("Theta=1.0") != std::string::npos);
  CHECK(manifest.find("n_iter=40") != std::string::npos);

  REQUIRE(run("summarize --input " + out + "/panel.csv --out " + out) == 0);
  CHECK(fs::exists(dir / "run" / "yearly.csv"));
  CHECK(fs::exists(dir / "run" / "yearly_long.csv"));
}

TEST_CASE("identical seeds rewrite byte-identical outputs") {
  auto dir = workdir();
  auto a = (dir / "a").string();
  auto b = (dir / "b").string();
  for (const auto& out : {a, b}) {
    REQUIRE(run("simulate --seed 9 --out " + out +
                " --set sim_n=10 --set sim_t=8") == 0);
    REQUIRE(run("fit --input " + out + "/panel.csv --out " + out +
                " --seed 9 --threads 2 --set n_iter=20 --set burn_in=10 "
                "--set n_chains=1") == 0);
  }
  CHECK(slurp(fs::path(a) / "panel.csv") == slurp(fs::path(b) / "panel.csv"));
  CHECK(slurp(fs::path(a) / "chain_0_sigma.csv") ==
        slurp(fs::path(b) / "chain_0_sigma.csv"));
  CHECK(slurp(fs::path(a) / "chain_0_coeffs.csv") ==
        slurp(fs::path(b) / "chain_0_coeffs.csv"));
}

TEST_CASE("zero-variance simulation yields a constant panel and zero moments") {
  auto dir = workdir();
  auto out = (dir / "zero").string();
  REQUIRE(run("simulate --seed 1 --out " + out +
              " --set sim_n=5 --set sim_t=8 --set sim_gamma_sq=0 "
              "--set sim_sigma_omega=0 --set sim_sigma_epsilon=0") == 0);
  REQUIRE(run("moments --input " + out + "/panel.csv --out " + out) == 0);
  std::ifstream f(fs::path(out) / "moments.csv");
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    auto last = line.rfind(',');
    auto mid = line.find(',', line.find(',', line.find(',') + 1) + 1);
    (void)last;
    // mean column (3rd) is zero for every year
    auto c1 = line.find(',');
    auto c2 = line.find(',', c1 + 1);
    auto c3 = line.find(',', c2 + 1);
    double mean = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
    CHECK(mean == 0.0);
  }
}

TEST_CASE("fit refuses a panel with unimputed gaps") {
  auto dir = workdir();
  auto gap = dir / "gap.csv";
  {
    std::ofstream f(gap);
    f << "person_id,year,log_income,weight\n";
    for (int t = 0; t < 10; ++t)
      if (t != 4) f << "1," << 1990 + t << ",0." << t << ",1\n";
  }
  CHECK(run("fit --input " + gap.string() + " --out " + (dir / "g").string() +
            " --set n_iter=5 --set burn_in=1") != 0);
}
