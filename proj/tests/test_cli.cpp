#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "l2c/errors.hpp"
#include "l2c/run_config.hpp"
#include "small_data.hpp"
#include "support.hpp"

using namespace l2c;
using namespace l2c::testing;

namespace {

int run(const std::string& args, const std::string& env = "env -u L2C_SEED") {
  const std::string cmd = env + " " + L2C_CLI_PATH + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

/// Small geometry so the whole pipeline runs in well under a second.
fs::path write_small_config(const fs::path& dir) {
  RunConfig run;
  run.synth = small_synth(0, 10);
  run.model.encoder.ffn_hidden = 16;
  run.model.ffn_hidden = 16;
  run.model.cache_size = 2;
  run.train = small_train();
  run.support = 4;
  json j = run.to_json();
  for (const char* s : {"synth", "model", "train"}) j[s].erase("seed");
  j.erase("seed");
  const fs::path p = dir / "small.json";
  write_json(p, j);
  return p;
}

EmbeddingBundle random_bundle(std::size_t templates, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingBundle b;
  b.dim = 4;
  b.classes = {"a", "b", "c"};
  for (std::size_t p = 0; p < templates; ++p) {
    b.templates.push_back("t" + std::to_string(p));
    b.embeddings.push_back(random_matrix(3, 4, rng));
  }
  b.dtype = Dtype::kF64;
  return b;
}

}  // namespace

TEST_CASE("overrides set nested keys and parse JSON values") {
  json j = json::object();
  apply_override(j, "train.lr=0.5");
  apply_override(j, "model.ablation.daf=false");
  apply_override(j, "synth.task=regression");
  CHECK(j["train"]["lr"] == 0.5);
  CHECK(j["model"]["ablation"]["daf"] == false);
  CHECK(j["synth"]["task"] == "regression");
  CHECK_THROWS_AS(apply_override(j, "noequals"), ValidationError);
  CHECK_THROWS_AS(apply_override(j, "a..b=1"), ValidationError);
  CHECK_THROWS_AS(apply_override(j, "train.lr.x=1"), ValidationError);
}

TEST_CASE("seed fallback order") {
  const RunConfig defaults = resolve_run_config(std::nullopt, {}, std::nullopt);
  CHECK(defaults.seed == 0);
  CHECK(defaults.train.seed == 0);

  const RunConfig env = resolve_run_config(std::nullopt, {}, std::string("5"));
  CHECK(env.seed == 5);
  CHECK(env.synth.seed == 5);
  CHECK(env.model.seed == 5);
  CHECK(env.train.seed == 5);

  const RunConfig mixed = resolve_run_config(std::nullopt, {"seed=2", "synth.seed=9"}, std::string("5"));
  CHECK(mixed.seed == 2);
  CHECK(mixed.synth.seed == 9);
  CHECK(mixed.train.seed == 2);

  CHECK_THROWS_AS(resolve_run_config(std::nullopt, {}, std::string("x")), ValidationError);
  CHECK_THROWS_AS(resolve_run_config(std::nullopt, {"train.typo=1"}, std::nullopt), ValidationError);
  CHECK_THROWS_AS(resolve_run_config(std::nullopt, {"support=0"}, std::nullopt), ValidationError);
}

TEST_CASE("run config round trips") {
  const RunConfig a = resolve_run_config(std::nullopt, {"train.epochs=3", "support=7"}, std::string("4"));
  const RunConfig b = RunConfig::from_json(a.to_json());
  CHECK(a.to_json() == b.to_json());
  CHECK(b.train.epochs == 3);
  CHECK(b.support == 7);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("synth") == 1);
  CHECK(run("ensemble --bundle x --out y --criterion median") == 1);
}

TEST_CASE("gradcheck on fresh init passes") {
  TempDir tmp("cli_grad");
  CHECK(run("gradcheck --out " + (tmp.path() / "g.json").string()) == 0);
  const json report = read_json(tmp.path() / "g.json");
  CHECK(report["pass"] == true);
  CHECK(report["max_rel_error"].get<double>() < 1e-4);
  CHECK(report.contains("config"));
  CHECK(run("gradcheck --perturb --task regression --out " + (tmp.path() / "r.json").string()) == 0);
}

TEST_CASE("gradcheck rejects an out-of-range step") {
  TempDir tmp("cli_grad_bad");
  CHECK(run("gradcheck --eps 0.5 --out " + (tmp.path() / "g.json").string()) == 2);
  CHECK(!fs::exists(tmp.path() / "g.json"));
}

TEST_CASE("ensemble on a one-template bundle keeps index 0 and reruns identically") {
  TempDir tmp("cli_ens");
  save_bundle(random_bundle(1, 1), tmp.path() / "b1");
  const std::string out1 = (tmp.path() / "p1.bin").string();
  REQUIRE(run("ensemble --bundle " + (tmp.path() / "b1").string() + " --out " + out1) == 0);
  const json report = read_json(out1 + ".report.json");
  CHECK(report["selected_template_indices"] == json::array({0}));

  save_bundle(random_bundle(8, 2), tmp.path() / "b8");
  for (const char* criterion : {"uniformity", "atfd"}) {
    const std::string a = (tmp.path() / "a.bin").string(), b = (tmp.path() / "b.bin").string();
    const std::string args = "ensemble --bundle " + (tmp.path() / "b8").string() + " --criterion " + criterion;
    REQUIRE(run(args + " --out " + a) == 0);
    REQUIRE(run(args + " --out " + b) == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a + ".report.json") == slurp(b + ".report.json"));
    const auto trace = read_json(a + ".report.json")["criterion_trace"].get<std::vector<double>>();
    for (std::size_t i = 1; i < trace.size(); ++i) {
      if (std::string(criterion) == "uniformity") CHECK(trace[i] < trace[i - 1]);
      else CHECK(trace[i] > trace[i - 1]);
    }
  }
  CHECK(run("ensemble --bundle " + (tmp.path() / "missing").string() + " --out " + out1) == 2);
}

TEST_CASE("synth honours L2C_SEED and echoes the resolved config") {
  TempDir tmp("cli_seed");
  const fs::path cfg = write_small_config(tmp.path());
  const std::string base = "synth --config " + cfg.string() + " --out ";
  REQUIRE(run(base + (tmp.path() / "a").string(), "L2C_SEED=5") == 0);
  const json echoed = read_json(tmp.path() / "a" / "run_config.json");
  CHECK(echoed["seed"] == 5);
  CHECK(echoed["synth"]["seed"] == 5);
  CHECK(load_dataset(tmp.path() / "a").config.seed == 5);

  REQUIRE(run(base + (tmp.path() / "b").string() + " --set synth.seed=1", "L2C_SEED=5") == 0);
  CHECK(read_json(tmp.path() / "b" / "run_config.json")["synth"]["seed"] == 1);
  CHECK(run(base + (tmp.path() / "c").string(), "L2C_SEED=oops") == 2);
  CHECK(!fs::exists(tmp.path() / "c"));
}

TEST_CASE("pipeline commands are deterministic, validate inputs and never write partial output") {
  TempDir tmp("cli_pipe");
  const fs::path cfg = write_small_config(tmp.path());
  const std::string c = " --config " + cfg.string();
  const std::string data = (tmp.path() / "data").string();
  REQUIRE(run("synth --out " + data + c) == 0);
  const auto data_before = snapshot(data);

  for (const char* tag : {"1", "2"}) {
    const std::string t = tag;
    const std::string ck = (tmp.path() / ("ck" + t)).string(), pr = (tmp.path() / ("pr" + t)).string();
    REQUIRE(run("train --data " + data + " --out " + ck + c) == 0);
    const auto ck_before = snapshot(ck);
    REQUIRE(run("adapt --ckpt " + ck + " --data " + data + " --domain 2 --out " + pr + c) == 0);
    REQUIRE(run("eval --ckpt " + ck + " --prompt " + pr + " --data " + data + " --domain 2 --out " +
                (tmp.path() / ("m" + t + ".json")).string() + c) == 0);
    CHECK(snapshot(ck) == ck_before);
  }
  CHECK(snapshot(data) == data_before);
  CHECK(snapshot(tmp.path() / "ck1") == snapshot(tmp.path() / "ck2"));
  CHECK(snapshot(tmp.path() / "pr1") == snapshot(tmp.path() / "pr2"));
  CHECK(slurp(tmp.path() / "m1.json") == slurp(tmp.path() / "m2.json"));
  CHECK(fs::exists(tmp.path() / "ck1" / "curve.csv"));
  CHECK(fs::exists(tmp.path() / "pr1" / "run_config.json"));
  const json metrics = read_json(tmp.path() / "m1.json");
  CHECK(metrics["metrics"].contains("accuracy"));
  CHECK(metrics.contains("config"));

  const std::string ck1 = (tmp.path() / "ck1").string();
  const fs::path out = tmp.path() / "never.json";
  SUBCASE("missing prompt") {
    CHECK(run("eval --ckpt " + ck1 + " --prompt " + (tmp.path() / "nope").string() + " --data " + data +
              " --domain 2 --out " + out.string() + c) == 2);
  }
  SUBCASE("prompt from another checkpoint") {
    REQUIRE(run("train --data " + data + " --out " + (tmp.path() / "ck3").string() + c +
                " --set train.seed=9") == 0);
    CHECK(run("eval --ckpt " + (tmp.path() / "ck3").string() + " --prompt " + (tmp.path() / "pr1").string() +
              " --data " + data + " --domain 2 --out " + out.string() + c) == 2);
  }
  SUBCASE("support larger than the domain") {
    CHECK(run("adapt --ckpt " + ck1 + " --data " + data + " --domain 2 --support 100000 --out " +
              out.string() + c) == 2);
  }
  SUBCASE("unknown domain") {
    CHECK(run("eval --ckpt " + ck1 + " --prompt " + (tmp.path() / "pr1").string() + " --data " + data +
              " --domain 42 --out " + out.string() + c) == 2);
  }
  CHECK(!fs::exists(out));
}
