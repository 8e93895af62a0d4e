#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "temp_dir.hpp"

namespace {

const std::string kTool = TBAL_CLI_PATH;

/// Exit status of the tool run with `args`; stdout/stderr go to `log`.
int run_tool(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = "'" + kTool + "' " + args + " >'" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

const std::string kSmallConfig = R"(seed: 3
repeats: 2
score_dumps: false
dataset:
  synthetic:
    num_classes: 2
    dim: 1
    radius: 10
    sigma: 0.5
    n_unlabeled: 200
    n_validation: 80
    n_test: 40
    seed: 1
tbal:
  train_budget: 40
  seed_size: 20
  query_batch: 10
  hidden: [4]
  train:
    epochs: 10
    batch_size: 8
)";

}  // namespace

TEST_CASE("run writes results and exits 0") {
  tbal::testing::TempDir dir;
  write(dir / "cfg.yaml", kSmallConfig);
  const auto out = (dir / "out").string();
  CHECK(run_tool("run --config '" + (dir / "cfg.yaml").string() + "' --out '" + out + "'",
                 dir / "log") == 0);
  CHECK(std::filesystem::exists(dir / "out" / "summary.json"));
  CHECK(std::filesystem::exists(dir / "out" / "run_1.rounds.jsonl"));
  CHECK(read(dir / "log").find("coverage") != std::string::npos);

  // Existing results are a runtime error unless forced.
  CHECK(run_tool("run --config '" + (dir / "cfg.yaml").string() + "' --out '" + out + "'",
                 dir / "log") == 2);
  CHECK(read(dir / "log").find("--force") != std::string::npos);
  CHECK(run_tool("run --force --jobs 2 --seed 9 --config '" + (dir / "cfg.yaml").string() +
                     "' --out '" + out + "'",
                 dir / "log") == 0);
}

TEST_CASE("configuration problems exit 1") {
  tbal::testing::TempDir dir;
  write(dir / "typo.yaml", kSmallConfig + "  epsilom_a: 0.1\n");
  CHECK(run_tool("run --config '" + (dir / "typo.yaml").string() + "'", dir / "log") == 1);
  CHECK(read(dir / "log").find("tbal.epsilom_a") != std::string::npos);

  CHECK(run_tool("run", dir / "log") == 1);
  CHECK(run_tool("run --config '" + (dir / "absent.yaml").string() + "'", dir / "log") == 1);
  CHECK(run_tool("frobnicate", dir / "log") == 1);
  CHECK(run_tool("run --jobs 0 --config '" + (dir / "typo.yaml").string() + "'", dir / "log") ==
        1);

  write(dir / "nohpo.yaml", kSmallConfig);
  CHECK(run_tool("hpo --config '" + (dir / "nohpo.yaml").string() + "'", dir / "log") == 1);

  write(dir / "files.yaml",
        "dataset:\n  files:\n    unlabeled: {path: gone.csv}\n    validation: {path: gone.csv}\n");
  CHECK(run_tool("run --config '" + (dir / "files.yaml").string() + "'", dir / "log") == 1);
}

TEST_CASE("unreadable data exits 2") {
  tbal::testing::TempDir dir;
  write(dir / "bad.csv", "x0,label\n1.0,zero\n");
  write(dir / "cfg.yaml", "output_dir: out\ndataset:\n  files:\n    unlabeled: {path: bad.csv}\n"
                          "    validation: {path: bad.csv}\n");
  CHECK(run_tool("run --config '" + (dir / "cfg.yaml").string() + "'", dir / "log") == 2);
}

TEST_CASE("toy-check and gen-synth") {
  tbal::testing::TempDir dir;
  CHECK(run_tool("toy-check --w-step 0.5 --t-step 0.5 --alphas 1,10", dir / "log") == 0);
  const auto csv = read(dir / "log");
  CHECK(csv.rfind("w,t,alpha,actual_err,surrogate_err,actual_cov,surrogate_cov\n", 0) == 0);
  CHECK(run_tool("toy-check --w-step 0.3", dir / "log") == 2);
  CHECK(run_tool("toy-check --domain sideways", dir / "log") == 1);

  write(dir / "cfg.yaml", kSmallConfig);
  const auto out = (dir / "data").string();
  CHECK(run_tool("gen-synth --format rawf32 --config '" + (dir / "cfg.yaml").string() +
                     "' --out '" + out + "'",
                 dir / "log") == 0);
  CHECK(std::filesystem::exists(dir / "data" / "unlabeled.f32"));
  CHECK(std::filesystem::exists(dir / "data" / "test.f32"));
  CHECK(run_tool("gen-synth --format rawf32 --config '" + (dir / "cfg.yaml").string() +
                     "' --out '" + out + "'",
                 dir / "log") == 2);
}
