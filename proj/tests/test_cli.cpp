#include <cstdio>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "odtk/bundle.hpp"
#include "odtk/csv.hpp"
#include "odtk/synthetic.hpp"
#include "test_support.hpp"

using namespace odtk;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string &args) {
  const std::string cmd = std::string(ODTK_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE *p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.out += buf;
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("cli");
    synthetic::Config cfg;
    cfg.n = 400;
    cfg.d = 256;
    cfg.v = 120;
    cfg.h = 48;
    cfg.planted = 2;
    cfg.n_layers = 2;
    planted_ = new synthetic::Planted(synthetic::make_planted(cfg));
    save_bundle(planted_->bundle, dir_->path() / "bundle");
    auto early = planted_->bundle;
    early.manifest.checkpoint_step = "100";
    for (auto &x : early.activations.values()) x *= 0.01f;
    save_bundle(early, dir_->path() / "early");
  }
  static void TearDownTestSuite() {
    delete planted_;
    delete dir_;
  }
  static std::string bundle() { return (dir_->path() / "bundle").string(); }
  static std::string out(const std::string &name) { return (dir_->path() / name).string(); }

  static inline test::TempDir *dir_ = nullptr;
  static inline synthetic::Planted *planted_ = nullptr;
};

nlohmann::json read_json(const std::string &path) { return nlohmann::json::parse(test::slurp(path)); }

} // namespace

TEST_F(Cli, HelpAndUsage) {
  const auto help = run("--help");
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("detect"), std::string::npos);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("nonsense").code, 2);
  EXPECT_EQ(run("detect").code, 2); // --bundle missing
}

TEST_F(Cli, DetectWritesEnvelope) {
  const auto r = run("detect --bundle " + bundle() + " --out " + out("d") + " --format json,csv,svg");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = read_json(out("d") + "/detect.json");
  EXPECT_EQ(j["tool"], "odtk");
  EXPECT_EQ(j["spec_version"], "1.0.0");
  EXPECT_EQ(j["config"]["quantile"], 0.99);
  EXPECT_EQ(j["result"]["od_indices"].get<std::vector<std::size_t>>(), planted_->dims);
  EXPECT_TRUE(std::filesystem::exists(out("d") + "/detect_dimensions.csv"));
  EXPECT_TRUE(std::filesystem::exists(out("d") + "/fig_medians.svg"));
}

TEST_F(Cli, DetectIsDeterministic) {
  ASSERT_EQ(run("detect --bundle " + bundle() + " --out " + out("d1")).code, 0);
  ASSERT_EQ(run("detect --bundle " + bundle() + " --out " + out("d2")).code, 0);
  EXPECT_EQ(test::slurp(out("d1") + "/detect.json"), test::slurp(out("d2") + "/detect.json"));
  EXPECT_EQ(test::slurp(out("d1") + "/detect_dimensions.csv"), test::slurp(out("d2") + "/detect_dimensions.csv"));
}

TEST_F(Cli, AblateGridAndSingleMode) {
  ASSERT_EQ(run("ablate --bundle " + bundle() + " --out " + out("a") + " --seeds 1,2").code, 0);
  const auto table = csv::parse(test::slurp(out("a") + "/ablate_table.csv"));
  EXPECT_GE(table.rows.size(), 5u);
  const auto r = run("ablate --bundle " + bundle() + " --out " + out("a2") + " --mode only-random --k 3 --seeds 4");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto bad = run("ablate --bundle " + bundle() + " --out " + out("a3") + " --mode only-random --k 1000");
  EXPECT_EQ(bad.code, exit_code(ErrorKind::InvalidArgument)) << bad.out;
}

TEST_F(Cli, FreqLogitsSpikesLayers) {
  ASSERT_EQ(run("freq --bundle " + bundle() + " --out " + out("f")).code, 0);
  EXPECT_TRUE(std::filesystem::exists(out("f") + "/freq_points_full.csv"));
  const auto lg = run("logits --bundle " + bundle() + " --out " + out("l") + " --min-count 1 --min-full-count 1");
  ASSERT_EQ(lg.code, 0) << lg.out;
  EXPECT_TRUE(std::filesystem::exists(out("l") + "/logits_contributions.csv"));
  const auto sp = run("spikes --bundle " + bundle() + " --out " + out("s") + " --trials 200 --format json,csv,svg");
  ASSERT_EQ(sp.code, 0) << sp.out;
  const auto j = read_json(out("s") + "/spikes.json");
  EXPECT_EQ(j["result"]["spikes"]["vectors"][0]["spikes"].get<std::vector<std::size_t>>(), planted_->dims);
  EXPECT_TRUE(std::filesystem::exists(out("s") + "/fig_spikes_singular_vector_1.svg"));
  ASSERT_EQ(run("layers --bundle " + bundle() + " --out " + out("y")).code, 0);
  EXPECT_EQ(csv::parse(test::slurp(out("y") + "/layers.csv")).rows.size(), 2u);
}

TEST_F(Cli, TimelineAndRender) {
  const auto early = out("early");
  const auto r = run("timeline --bundles " + early + "," + bundle() + " --out " + out("t") + " --seeds 1");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto t = csv::parse(test::slurp(out("t") + "/timeline.csv"));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][t.column("step")], "100");
  ASSERT_EQ(run("detect --bundle " + bundle() + " --out " + out("r")).code, 0);
  const auto rr = run("render --input " + out("r") + "/detect_dimensions.csv --kind medians --out " + out("r"));
  ASSERT_EQ(rr.code, 0) << rr.out;
  EXPECT_NE(test::slurp(out("r") + "/detect_dimensions.svg").find("<svg"), std::string::npos);
}

TEST_F(Cli, ExitCodesByErrorKind) {
  EXPECT_EQ(run("detect --bundle " + out("nope") + " --out " + out("x")).code, exit_code(ErrorKind::MissingFile));
  EXPECT_EQ(run("detect --bundle " + bundle() + " --quantile 1.5 --out " + out("x")).code,
            exit_code(ErrorKind::InvalidArgument));
  EXPECT_EQ(run("spikes --bundle " + bundle() + " --trials 0 --out " + out("x")).code,
            exit_code(ErrorKind::InvalidArgument));
  test::spit(out("bad.csv"), "a,b\n1,2\n");
  EXPECT_EQ(run("render --input " + out("bad.csv") + " --kind spikes --out " + out("x")).code,
            exit_code(ErrorKind::MalformedReport));
  EXPECT_EQ(run("timeline --bundles " + bundle() + " --out " + out("x")).code,
            exit_code(ErrorKind::IncompatibleBundles));
}

TEST_F(Cli, Validate) {
  const auto ok = run("validate --bundle " + bundle());
  EXPECT_EQ(ok.code, 0) << ok.out;
  test::TempDir tmp("cli-validate");
  auto b = planted_->bundle;
  b.samples.ground_truth[0] = b.v() + 5;
  save_bundle(b, tmp.path() / "b");
  const auto bad = run("validate --bundle " + (tmp.path() / "b").string());
  EXPECT_EQ(bad.code, exit_code(ErrorKind::InvalidRecord));
  EXPECT_NE(bad.out.find("out of range"), std::string::npos) << bad.out;
}
