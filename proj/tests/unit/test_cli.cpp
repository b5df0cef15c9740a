#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli/cli.hpp"
#include "flowik/checkpoint.hpp"
#include "flowik/training.hpp"

namespace fs = std::filesystem;
using flowik::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result flowik_cmd(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("flowik_cli_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Drops the last CSV column (wall time) of every line.
std::string without_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, kept;
  while (std::getline(in, line)) kept += line.substr(0, line.rfind(',')) + "\n";
  return kept;
}

}  // namespace

TEST_CASE("fk") {
  const Result r = flowik_cmd({"fk", "raily_chain3", "0", "0", "0", "0"});
  CHECK(r.code == 0);
  CHECK(r.out == "3.000000000 0.000000000 0.000000000 | 1 0 0 0\n");

  // Negative values are positionals, not options.
  CHECK(flowik_cmd({"fk", "raily_chain3", "-0.5", "0", "0", "0"}).code == 0);

  const Result arity = flowik_cmd({"fk", "raily_chain3", "0", "0", "0"});
  CHECK(arity.code == 2);
  CHECK(arity.err.find("usage: flowik fk raily_chain3 q0 q1 q2 q3") != std::string::npos);
  CHECK(flowik_cmd({"fk", "raily_chain3", "0", "0", "0", "0", "0"}).code == 2);
  CHECK(flowik_cmd({"fk", "raily_chain3", "0", "x", "0", "0"}).code == 2);
  CHECK(flowik_cmd({"fk", "raily_chain3", "0", "nan", "0", "0"}).code == 2);
  CHECK(flowik_cmd({"fk", "no_such_chain", "0"}).code == 3);

  const Result limit = flowik_cmd({"fk", "raily_chain3", "2", "0", "0", "0"});
  CHECK(limit.code == 2);
  CHECK(limit.out.empty());

  const Result clamped = flowik_cmd({"fk", "raily_chain3", "2", "0", "0", "0", "--clamp"});
  CHECK(clamped.code == 0);
  CHECK(clamped.err.find("warning: joint 0") != std::string::npos);
  // Rail limit is 1 m: the clamped configuration reaches x = 3, y = 1.
  CHECK(clamped.out.rfind("3.000000000 1.000000000 0.000000000 |", 0) == 0);
}

TEST_CASE("usage errors") {
  CHECK(flowik_cmd({}).code == 2);
  CHECK(flowik_cmd({"bogus"}).code == 2);
  CHECK(flowik_cmd({"sample", "--count", "x"}).code == 2);
  CHECK(flowik_cmd({"sample", "--no-such-flag"}).code == 2);
  CHECK(flowik_cmd({"generate", "--chain", "raily_chain3"}).code == 2);  // no --out
  CHECK(flowik_cmd({"fk", "raily_chain3", "0", "0", "0", "0", "--threads", "-1"}).code == 2);
  const Result help = flowik_cmd({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("generate") != std::string::npos);
}

TEST_CASE("config resolution order") {
  TempDir dir;
  const std::string cfg = dir.file("run.json");
  {
    std::ofstream f(cfg);
    f << R"({"seed": 9, "chain": "arm7", "sample": {"count": 7, "latent_scale": 0.5}})";
  }
  const Result r = flowik_cmd({"sample", "--config", cfg, "--count", "3", "--print-config"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("seed = 9  (config " + cfg + ")") != std::string::npos);
  CHECK(r.out.find("threads = 0  (default)") != std::string::npos);
  CHECK(r.out.find("sample.count = 3  (flag)") != std::string::npos);
  CHECK(r.out.find("sample.latent_scale = 0.5  (config") != std::string::npos);
  CHECK(r.out.find("sample.chain = arm7  (config") != std::string::npos);
  CHECK(r.out.find("sample.out = -  (default)") != std::string::npos);

  {
    std::ofstream f(dir.file("bad.json"));
    f << R"({"sample": {"count": "many"}})";
  }
  CHECK(flowik_cmd({"sample", "--config", dir.file("bad.json"), "--print-config"}).code == 3);
  {
    std::ofstream f(dir.file("junk.json"));
    f << "count = 3";
  }
  CHECK(flowik_cmd({"sample", "--config", dir.file("junk.json")}).code == 3);
  CHECK(flowik_cmd({"sample", "--config", dir.file("missing.json")}).code == 3);
}

TEST_CASE("pipeline commands") {
  TempDir dir;
  const std::string ds = dir.file("d.ds");
  const std::string ckpt = dir.file("m.ckpt");
  REQUIRE(flowik_cmd({"generate", "--chain", "raily_chain3", "--count", "3000", "--out", ds,
                      "--seed", "4"})
              .code == 0);

  SUBCASE("zero batches writes the initialized model") {
    REQUIRE(flowik_cmd({"train", "--data", ds, "--out", ckpt, "--max-batches", "0"}).code == 0);
    const flowik::LoadedCheckpoint lc = flowik::load_checkpoint(ckpt);
    CHECK(lc.info.training.at("batches") == "0");
    CHECK(lc.model.num_layers() == 6);
    CHECK(lc.model.config().hidden == std::vector<int>{128, 128, 128});
    CHECK(slurp(ckpt + ".log.csv") == "batch,loss,current_lr,wall_ms\n");

    // Fresh models are the identity in their coupling layers: the output
    // layers start at zero.
    for (std::size_t k = 0; k < lc.model.num_layers(); ++k) {
      CHECK(lc.model.coupling(k).net().layers().back().weight.isZero());
    }
  }

  SUBCASE("sample with count 0") {
    REQUIRE(flowik_cmd({"train", "--data", ds, "--out", ckpt, "--max-batches", "0"}).code == 0);
    const Result r = flowik_cmd({"sample", "--model", ckpt, "--pose", "2,0.5", "--count", "0"});
    CHECK(r.code == 0);
    CHECK(r.out == "joint_0,joint_1,joint_2,joint_3,pos_err_m,ang_err_rad\n");
    CHECK(flowik_cmd({"sample", "--model", ckpt, "--pose", "2,0.5,1"}).code == 2);
    CHECK(flowik_cmd({"sample", "--model", ckpt}).code == 2);
    CHECK(flowik_cmd({"sample", "--model", ckpt, "--pose", "1,1", "--count", "-1"}).code == 2);
  }

  SUBCASE("train, sample and refine") {
    const std::vector<std::string> train_args = {"train", "--data", ds, "--out", ckpt,
                                                 "--max-batches", "40", "--hidden", "32,32",
                                                 "--layers", "4", "--seed", "2"};
    REQUIRE(flowik_cmd(train_args).code == 0);
    const std::string log1 = slurp(ckpt + ".log.csv");
    const std::string model1 = slurp(ckpt);
    REQUIRE(flowik_cmd(train_args).code == 0);
    CHECK(slurp(ckpt) == model1);
    CHECK(without_last_column(slurp(ckpt + ".log.csv")) == without_last_column(log1));

    std::istringstream lines(log1);
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) ++n;
    CHECK(n == 41);
    CHECK(log1.rfind("batch,loss,current_lr,wall_ms\n1,", 0) == 0);

    const std::string samples = dir.file("s.csv");
    const std::vector<std::string> sample_args = {"sample", "--model", ckpt, "--target-joints",
                                                  "0.2,0.1,-0.3,0.4", "--count", "20",
                                                  "--out", samples, "--seed", "5"};
    REQUIRE(flowik_cmd(sample_args).code == 0);
    const std::string s1 = slurp(samples);
    REQUIRE(flowik_cmd(sample_args).code == 0);
    CHECK(slurp(samples) == s1);
    CHECK(std::count(s1.begin(), s1.end(), '\n') == 21);

    // Thread count does not change anything.
    std::vector<std::string> threaded = sample_args;
    threaded.insert(threaded.end(), {"--threads", "3"});
    REQUIRE(flowik_cmd(threaded).code == 0);
    CHECK(slurp(samples) == s1);

    const Result refined = flowik_cmd({"refine", "--model", ckpt, "--target-joints",
                                       "0.2,0.1,-0.3,0.4", "--in", samples});
    REQUIRE(refined.code == 0);
    std::istringstream rows(refined.out);
    std::getline(rows, line);
    CHECK(line == "joint_0,joint_1,joint_2,joint_3,iterations,converged,pos_err_m,ang_err_rad");
    int converged = 0;
    while (std::getline(rows, line)) {
      std::vector<std::string> cells;
      std::istringstream ls(line);
      std::string c;
      while (std::getline(ls, c, ',')) cells.push_back(c);
      REQUIRE(cells.size() == 8);
      if (cells[5] == "1") {
        ++converged;
        CHECK(std::stod(cells[6]) <= 1e-6);
      }
    }
    CHECK(converged > 0);

    // Bad inputs for refine.
    {
      std::ofstream f(dir.file("bad.csv"));
      f << "joint_0,joint_1,joint_2,joint_3\n0,0,zero,0\n";
    }
    CHECK(flowik_cmd({"refine", "--chain", "raily_chain3", "--pose", "2,0", "--in",
                      dir.file("bad.csv")})
              .code == 3);
    CHECK(flowik_cmd({"refine", "--chain", "raily_chain3", "--pose", "2,0", "--in",
                      dir.file("none.csv")})
              .code == 3);

    // Resuming continues the batch counter.
    REQUIRE(flowik_cmd({"train", "--data", ds, "--out", dir.file("r.ckpt"), "--resume", ckpt,
                        "--max-batches", "10"})
                .code == 0);
    CHECK(flowik::load_checkpoint(dir.file("r.ckpt")).info.training.at("batches") == "50");

    const Result ev = flowik_cmd({"eval", "--model", ckpt, "--poses", "4", "--solutions", "5",
                                  "--mmd-poses", "3", "--mmd-solutions", "6", "--runtime-counts",
                                  "", "--out-dir", dir.file("ev")});
    REQUIRE(ev.code == 0);
    CHECK(fs::exists(dir.file("ev/summary.csv")));
    CHECK(fs::exists(dir.file("ev/summary.json")));
    CHECK(fs::exists(dir.file("ev/accuracy_0.25.csv")));
    CHECK(fs::exists(dir.file("ev/mmd_1.csv")));
    CHECK(ev.out.rfind("latent_scale,mmd_score,mean_pos_err_mm,mean_ang_err_deg\n", 0) == 0);
  }

  SUBCASE("file errors") {
    CHECK(flowik_cmd({"train", "--data", dir.file("none.ds"), "--out", ckpt}).code == 3);
    {
      std::ofstream f(dir.file("junk.ckpt"));
      f << "junk";
    }
    CHECK(flowik_cmd({"sample", "--model", dir.file("junk.ckpt"), "--pose", "1,1"}).code == 3);
    CHECK(flowik_cmd({"train", "--data", ds, "--chain", "arm7", "--out", ckpt}).code == 3);
  }

  SUBCASE("non-finite training aborts with the numerical exit code") {
    const Result r = flowik_cmd({"train", "--data", ds, "--out", ckpt, "--max-batches", "20",
                                 "--lr", "1e30", "--hidden", "16", "--layers", "2"});
    CHECK(r.code == 4);
    CHECK(r.err.find("numerical error") != std::string::npos);
  }
}

TEST_CASE("bench") {
  const Result r = flowik_cmd({"bench", "--chain", "raily_chain3", "--counts", "10,20",
                               "--repeats", "2"});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("count,ms\n10,", 0) == 0);
  CHECK(r.err.find("fit: ms = ") != std::string::npos);
  CHECK(flowik_cmd({"bench", "--chain", "raily_chain3", "--repeats", "0"}).code == 2);
  CHECK(flowik_cmd({"bench"}).code == 2);
}
