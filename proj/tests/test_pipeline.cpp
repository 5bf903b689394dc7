#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>

#include "dca/app/config.hpp"
#include "dca/app/pipeline.hpp"

using namespace dca;
using namespace dca::app;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dca_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig smoke(const fs::path& out) {
  auto c = load_config(DCA_SOURCE_DIR "/configs/smoke.ini");
  c.run.out_dir = out.string();
  return c;
}

void run_all(const ExperimentConfig& c, RunOptions opt) {
  for (const auto& name : subcommands()) run_subcommand(name, c, opt);
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path().string());
  // the echoed config names its own output directory
  auto& ini = out["config.resolved.ini"];
  ini.erase(ini.find("out_dir = "));
  return out;
}

int cli(const std::string& args) {
  const int status = std::system((std::string(DCA_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("exit codes by error kind", "[pipeline]") {
  CHECK(exit_code_for(Errc::missing_artifact) == 2);
  CHECK(exit_code_for(Errc::mixed_config_hash) == 2);
  CHECK(exit_code_for(Errc::missing_barrier_stats) == 2);
  CHECK(exit_code_for(Errc::non_finite) == 3);
  CHECK(exit_code_for(Errc::config_parse) == 1);
  const auto j = error_json("probe-barrier", Error(Errc::missing_artifact, "x"));
  CHECK(j["status"] == "error");
  CHECK(j["error"] == "missing-dependency-artifact");
  CHECK(j["exit_code"] == 2);
}

TEST_CASE("probe-barrier needs a score checkpoint", "[pipeline]") {
  const auto out = scratch("noscore");
  const auto c = smoke(out);
  run_subcommand("gen-data", c, {});
  run_subcommand("train-classifier", c, {});
  try {
    run_subcommand("probe-barrier", c, {});
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_artifact);
    CHECK(exit_code_for(e.code()) == 2);
    CHECK(e.message().find("train-score") != std::string::npos);
  }
  CHECK(cli("probe-barrier -c " DCA_SOURCE_DIR "/configs/smoke.ini --out " + out.string()) == 2);
  CHECK(cli("probe-barrier -c " DCA_SOURCE_DIR "/configs/smoke.ini --sde.lambda=1.7") == 1);
  CHECK(cli("no-such-command") == 1);
  fs::remove_all(out);
}

TEST_CASE("the pipeline is deterministic across job counts", "[pipeline]") {
  const auto a = scratch("jobs1"), b = scratch("jobs2");
  run_all(smoke(a), {true, 1, false});
  run_all(smoke(b), {true, 2, false});
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() == tb.size());
  for (const auto& [rel, content] : ta) {
    INFO(rel);
    REQUIRE(tb.count(rel) == 1);
    CHECK(content == tb.at(rel));
  }
  CHECK(ta.count("eval/metrics.json") == 1);
  CHECK(ta.count("ablation/report.csv") == 1);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("evaluate refuses artifacts from another config", "[pipeline]") {
  const auto out = scratch("mixed");
  auto c = smoke(out);
  run_all(c, {true, 1, false});
  auto other = c;
  other.run.seed = c.run.seed + 1;
  try {
    run_subcommand("evaluate", other, {});
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::mixed_config_hash);
    CHECK(e.message().find("models/score.ckpt") != std::string::npos);
  }
  const auto forced = run_subcommand("evaluate", other, {false, 1, true});
  CHECK(forced["result"]["metadata"]["forced"] == true);
  CHECK(run_subcommand("evaluate", c, {})["result"]["metadata"]["forced"] == false);
  fs::remove_all(out);
}

TEST_CASE("ablation reports both arms per class", "[pipeline]") {
  const auto out = scratch("ablation");
  const auto c = smoke(out);
  for (const auto* s : {"gen-data", "train-score", "train-classifier"}) run_subcommand(s, c, {});
  const auto r = run_subcommand("ablate-refinement", c, {});
  CHECK(r["result"]["wins"].size() == 3);
  const auto csv = read_file((out / "ablation/report.csv").string());
  CHECK(csv.rfind("# config_hash=", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2 + 2 * 3);
  fs::remove_all(out);
}

TEST_CASE("SVG output is byte-stable with the deterministic flag", "[pipeline]") {
  const auto out = scratch("svg");
  const auto c = smoke(out);
  run_subcommand("gen-data", c, {});
  run_subcommand("plot", c, {true, 1, false});
  const auto first = read_file((out / "plots/latent.svg").string());
  run_subcommand("plot", c, {true, 1, false});
  CHECK(read_file((out / "plots/latent.svg").string()) == first);
  CHECK(first.find("generated") == std::string::npos);
  run_subcommand("plot", c, {false, 1, false});
  CHECK(read_file((out / "plots/latent.svg").string()) != first);
  fs::remove_all(out);
}
