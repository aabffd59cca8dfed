// Runs the rnas binary and checks outputs and exit codes.

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(RNAS_CLI) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  Run r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string stderr_of(const std::string& args) {
  const std::string cmd = std::string(RNAS_CLI) + " " + args + " 2>&1 >/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string s;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) s.append(buf.data(), n);
  pclose(p);
  return s;
}

fs::path workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "rnas_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const char* kSmall = R"({
  "network": {"num_cells": 2, "init_channels": 4},
  "train": {"epochs": 2, "batch_size": 32},
  "synthetic": {"train_samples": 96, "test_samples": 64, "size": 8},
  "experiment": {"partition": [1, 1], "total_cells": 2, "total_epochs": 2, "seeds": [0, 1],
                 "train_samples": 64, "test_samples": 64,
                 "network": {"init_channels": 4, "input_shape": [3, 8, 8]}}
})";

// gen-data and train once; later cases reuse the files.
const fs::path& trained() {
  static const fs::path dir = [] {
    const fs::path d = workdir() / "base";
    fs::create_directories(d);
    write(d / "cfg.json", kSmall);
    REQUIRE(run("gen-data -q --config " + q(d / "cfg.json") + " --out " + q(d / "data")).code == 0);
    const Run r = run("train -q --config " + q(d / "cfg.json") + " --data " + q(d / "data/train.rten") +
                      " --genotype darts_v2 --seed 2 --out " + q(d / "train"));
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("stats reproduces the fixture tables") {
  const std::string dir = RNAS_DATA_DIR "/genotypes/";
  const Run darts = run("stats " + dir + "darts_v2.txt");
  REQUIRE(darts.code == 0);
  CHECK(darts.out ==
        "cell,max_pool,avg_pool,skip,sep_conv,dil_conv,unique\n"
        "normal,0,0,2,5,1,3\n"
        "reduce,5,0,3,0,0,2\n");
  const Run pdarts = run("stats " + dir + "pdarts.txt");
  CHECK(pdarts.out.find("normal,0,0,2,4,2,3\n") != std::string::npos);
  CHECK(pdarts.out.find("reduce,1,1,0,2,4,") != std::string::npos);
  const Run pc = run("stats " + dir + "pc_darts.txt");
  CHECK(pc.out.find("normal,0,1,1,4,2,4\n") != std::string::npos);
  CHECK(pc.out.find("reduce,1,0,0,7,0,2\n") != std::string::npos);
  // A builtin name gives the same table as its file.
  CHECK(run("stats darts_v2").out == darts.out);
}

TEST_CASE("sample is a function of the seed") {
  const Run a = run("sample --seed 11");
  const Run b = run("sample --seed 11");
  const Run c = run("sample --seed 12");
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out != c.out);
  const fs::path out = workdir() / "sample";
  REQUIRE(run("sample --seed 11 --out " + q(out)).code == 0);
  CHECK(slurp(out / "genotype.txt") == a.out);
  CHECK(run("stats " + q(out / "genotype.txt")).code == 0);
}

TEST_CASE("train writes checkpoint, log and resolved config") {
  const fs::path d = trained() / "train";
  CHECK(fs::exists(d / "model.rckt"));
  CHECK_FALSE(fs::exists(d / "model.rckt.tmp"));
  const json log = json::parse(slurp(d / "train_log.json"));
  CHECK(log.at("epochs").size() == 2);
  const json cfg = json::parse(slurp(d / "config.json"));
  CHECK(cfg.at("network").at("num_cells") == 2);
  CHECK(cfg.at("network").at("input_shape") == json::array({3, 8, 8}));
  CHECK(cfg.at("train").at("lr") == 0.05);  // default filled in
  CHECK(cfg.at("genotype") == "darts_v2");
}

TEST_CASE("evaluate with epsilon 0 gives clean accuracy in every column") {
  const fs::path d = trained();
  write(d / "zero.json", R"({"attacks": [{"kind": "fgsm", "epsilon": 0}, {"kind": "ffgsm", "epsilon": 0},
                                         {"kind": "pgd", "epsilon": 0}]})");
  const Run r = run("evaluate --config " + q(d / "zero.json") + " --model " + q(d / "train/model.rckt") +
                    " --data " + q(d / "data/test.rten") + " --out " + q(d / "eval0"));
  REQUIRE(r.code == 0);
  const json rep = json::parse(slurp(d / "eval0/report.json"));
  REQUIRE(rep.at("adversarial").size() == 3);
  for (const auto& [k, v] : rep.at("adversarial").items()) {
    CAPTURE(k);
    CHECK(v.get<double>() == rep.at("clean").get<double>());
  }
  CHECK(fs::exists(d / "eval0/config.json"));
}

TEST_CASE("evaluate is reproducible and honours --threads") {
  const fs::path d = trained();
  const std::string base = "evaluate --model " + q(d / "train/model.rckt") + " --data " + q(d / "data/test.rten") +
                           " --seed 5 --id m --out ";
  REQUIRE(run(base + q(d / "ev1")).code == 0);
  REQUIRE(run(base + q(d / "ev2") + " --threads 3").code == 0);
  json a = json::parse(slurp(d / "ev1/report.json"));
  json b = json::parse(slurp(d / "ev2/report.json"));
  a["config"].erase("eval");
  b["config"].erase("eval");
  CHECK(a == b);
}

TEST_CASE("attack writes one dataset per attack") {
  const fs::path d = trained();
  const Run r = run("attack --model " + q(d / "train/model.rckt") + " --data " + q(d / "data/test.rten") +
                    " --out " + q(d / "adv"));
  REQUIRE(r.code == 0);
  for (const char* k : {"fgsm", "ffgsm", "pgd"}) CHECK(fs::exists(d / "adv" / (std::string(k) + ".rten")));
}

TEST_CASE("report merges two JSONs into two rows") {
  const fs::path d = workdir() / "report";
  fs::create_directories(d);
  write(d / "a.json", R"({"model_id": "alpha", "params_millions": 1.0, "clean": 80,
                          "adversarial": {"fgsm": 30, "pgd": 10}, "hrs": 17.777777777777779})");
  write(d / "b.json", R"({"model_id": "beta", "params_millions": 2.0, "clean": 90,
                          "adversarial": {"pgd": 20}, "hrs": 32.727272727272727})");
  const Run r = run("report " + q(d / "b.json") + " " + q(d / "a.json") + " --out " + q(d / "out"));
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string header, row1, row2, extra;
  std::getline(lines, header);
  std::getline(lines, row1);
  std::getline(lines, row2);
  CHECK(header == "model,params_m,clean,fgsm,ffgsm,pgd,hrs,pp_hrs");
  CHECK(row1 == "alpha,1.00,80.00,30.00,,10.00,17.78,17.78");
  CHECK(row2.rfind("beta,2.00,90.00,,,20.00,32.73,", 0) == 0);
  CHECK_FALSE(std::getline(lines, extra));
  CHECK(slurp(d / "out/report.csv") == r.out);

  CHECK(run("report " + q(d / "a.json") + " " + q(d / "a.json")).code == 2);  // duplicate id
}

TEST_CASE("exit codes") {
  const fs::path d = trained();
  CHECK(run("").code == 1);
  CHECK(run("train --no-such-flag").code == 1);
  CHECK(run("evaluate --data x").code == 1);  // no --model
  CHECK(run("stats " + q(d / "missing.txt")).code == 2);
  CHECK(run("evaluate --model " + q(d / "data/test.rten") + " --data " + q(d / "data/test.rten") + " --out " +
            q(d / "bad"))
            .code == 2);  // not a model

  write(d / "unknown.json", R"({"trian": {}})");
  CHECK(run("train --config " + q(d / "unknown.json") + " --out " + q(d / "x")).code == 1);
  write(d / "badkey.json", R"({"train": {"epoch": 3}})");
  CHECK(run("train --config " + q(d / "badkey.json") + " --data " + q(d / "data/train.rten") + " --out " +
            q(d / "x"))
            .code == 1);

  write(d / "diverge.json", R"({"network": {"num_cells": 2, "init_channels": 4},
                                "train": {"epochs": 3, "lr": 1e30, "batch_size": 32}})");
  const std::string args = "train -q --config " + q(d / "diverge.json") + " --data " + q(d / "data/train.rten") +
                           " --genotype darts_v2 --out " + q(d / "div");
  CHECK(run(args).code == 3);
  const std::string err = stderr_of(args);
  CHECK(err.rfind("error: ", 0) == 0);
  CHECK(std::count(err.begin(), err.end(), '\n') == 1);
}

TEST_CASE("ensemble runs are reproducible") {
  const fs::path d = trained();
  const std::string base = "ensemble -q --config " + q(d / "cfg.json") + " --seed 3 --out ";
  REQUIRE(run(base + q(d / "ens1")).code == 0);
  REQUIRE(run(base + q(d / "ens2") + " --threads 2").code == 0);
  CHECK(slurp(d / "ens1/reports.json") == slurp(d / "ens2/reports.json"));
  CHECK(slurp(d / "ens1/table.csv") == slurp(d / "ens2/table.csv"));
  json a = json::parse(slurp(d / "ens1/result.json"));
  json b = json::parse(slurp(d / "ens2/result.json"));
  for (auto* j : {&a, &b})
    for (auto& r : (*j)["runs"]) r.erase("seconds");
  CHECK(a == b);
  const json cfg = json::parse(slurp(d / "ens1/config.json"));
  CHECK(cfg.at("experiment").at("seeds") == json::array({3, 4}));
  CHECK(a.at("runs").size() == 2);
}
