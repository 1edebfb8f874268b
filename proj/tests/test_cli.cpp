#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "vog/run_config.hpp"

namespace fs = std::filesystem;
using namespace vog;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
};

// Runs the command line tool in `dir`, capturing stdout and stderr.
Run vog_cli(const fs::path& dir, const std::string& args, const std::string& env = "") {
  const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" VOG_CLI_PATH "' " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("vog_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const std::string kSmall = "--set n_train=6 --set n_eval=6 --set epochs=2 ";

}  // namespace

TEST(RunConfig, ConfigTextEnvironmentAndPrecedence) {
  RunConfig c;
  apply_config_text(c, "# comment\nstrategy = temp\nseed=7  # trailing\n\ntheta=0.5\n", "cfg");
  EXPECT_EQ(c.strategy, Strategy::kTemp);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_DOUBLE_EQ(c.effective_theta(), 0.5);
  const std::map<std::string, std::string> env{{"VOG_SEED", "9"}, {"VOG_RPE", "off"}};
  apply_env(c, [&](const char* k) -> const char* {
    const auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.strategy, Strategy::kTemp);
  ASSERT_TRUE(c.rpe.has_value());
  EXPECT_FALSE(*c.rpe);
}

TEST(RunConfig, BadInputIsAConfigError) {
  RunConfig c;
  EXPECT_THROW(apply_config_text(c, "nonsense\n", "cfg"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "colour=red\n", "cfg"), ConfigError);
  EXPECT_THROW(set_option(c, "theta", "1.5"), ConfigError);
  EXPECT_THROW(set_option(c, "seed", "-1"), ConfigError);
  EXPECT_THROW(set_option(c, "strategy", "diagonal"), ConfigError);
  EXPECT_THROW(apply_config_file(c, "/nonexistent/vog.cfg"), ConfigError);
  try {
    apply_config_text(c, "seed=1\nepochs=many\n", "my.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("my.cfg:2"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, HashCoversResultsNotPaths) {
  RunConfig a, b;
  b.corpus = "elsewhere/corpus.jsonl";
  b.reports = "elsewhere";
  b.jobs = 4;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  RunConfig d;
  d.theta = 0.3;
  EXPECT_NE(config_hash(a), config_hash(d));
  const auto m = make_manifest(a, "eval");
  EXPECT_EQ(m["config_hash"], config_hash(a));
  EXPECT_EQ(m["seed"], 0);
  EXPECT_EQ(m["artifact_version"], kArtifactVersion);
}

TEST(RunConfig, ModelConflictsAndAblations) {
  RunConfig c;
  c.model = Variant::kImgGrnd;
  c.rpe = true;
  EXPECT_THROW(c.model_config(8, 4), ConfigError);
  c = RunConfig{};
  c.model = Variant::kVidGrnd;
  c.rpe = true;
  EXPECT_THROW(c.model_config(8, 4), ConfigError);
  c = RunConfig{};
  c.rpe = false;
  const auto m = c.model_config(8, 4);
  EXPECT_EQ(m.variant, Variant::kAblation);
  EXPECT_EQ(components_label(m), "OTx+MTx");
  c = RunConfig{};
  c.mtx = false;
  c.rpe = false;
  EXPECT_EQ(components_label(c.model_config(8, 4)), "OTx");
  c = RunConfig{};
  c.strategy = Strategy::kSep;
  EXPECT_TRUE(c.model_config(8, 4).verb_head);
  EXPECT_EQ(components_label(RunConfig{}.model_config(8, 4)), "OTx+MTx+RPE");
}

TEST(RunConfig, ProfileDefaults) {
  RunConfig c;
  c.profile = Profile::kPaper;
  EXPECT_EQ(c.effective_epochs(), 10u);
  EXPECT_DOUBLE_EQ(c.effective_lr(), 1e-4);
  c.epochs = 3;
  EXPECT_EQ(c.effective_epochs(), 3u);
  EXPECT_DOUBLE_EQ(c.effective_theta(), 0.2);
  c.gt5 = 0;
  EXPECT_DOUBLE_EQ(c.effective_theta(), 0.1);
  EXPECT_EQ(c.checkpoint_path(), (fs::path("work/checkpoints") / "last.ckpt").string());
}

TEST(RunConfig, ModelSettingsRoundTrip) {
  RunConfig c;
  c.strategy = Strategy::kSep;
  c.n_layers = 2;
  const auto m = c.model_config(10, 6);
  const auto back = model_config_from_json(model_config_to_json(m));
  EXPECT_EQ(model_config_to_json(back), model_config_to_json(m));
  EXPECT_EQ(back.n_l, 2u);
  EXPECT_TRUE(back.verb_head);
}

TEST(Cli, PipelineWritesManifestedArtifacts) {
  const auto d = fresh_dir("pipeline");
  const std::string s = kSmall + "--seed 5 --set clean_features=work/clean ";
  for (const auto* cmd : {"synth", "index", "sample --strategy temp", "assemble --strategy temp",
                          "train --strategy temp", "eval --strategy temp", "eval --strategy svsq", "report"}) {
    const auto r = vog_cli(d, std::string(cmd) + " " + s);
    ASSERT_EQ(r.code, 0) << cmd << "\n" << r.out;
  }
  const auto w = d / "work";
  for (const auto* p : {"corpus.jsonl.manifest.json", "features/manifest.json", "reports/index.json.manifest.json",
                        "reports/sets.jsonl.manifest.json", "reports/samples.jsonl.manifest.json",
                        "reports/report.csv.manifest.json", "reports/report.md.manifest.json"}) {
    ASSERT_TRUE(fs::exists(w / p)) << p;
    const auto m = json::parse(slurp(w / p));
    EXPECT_EQ(m["seed"], 5) << p;
    EXPECT_EQ(m["artifact_version"], kArtifactVersion) << p;
    EXPECT_TRUE(m.contains("config_hash")) << p;
  }
  EXPECT_TRUE(fs::exists(w / "checkpoints/epoch_001.ckpt"));
  EXPECT_TRUE(fs::exists(w / "checkpoints/epoch_002.ckpt"));
  const auto loss = json::parse(slurp(w / "checkpoints/loss.json"));
  EXPECT_EQ(loss["manifest"]["seed"], 5);
  EXPECT_EQ(loss["epochs"].size(), 2u);

  const auto index = json::parse(slurp(w / "reports/index.json"));
  ASSERT_TRUE(index.is_object());
  for (const auto& [role, lemmas] : index.items()) {
    ASSERT_TRUE(lemmas.is_object()) << role;
    for (const auto& [lemma, ids] : lemmas.items()) EXPECT_TRUE(ids.is_array()) << role << "/" << lemma;
  }

  const auto eval = json::parse(slurp(w / "reports/eval_vognet-OTx+MTx+RPE_temp_temp.json"));
  EXPECT_EQ(eval["manifest"]["seed"], 5);
  EXPECT_EQ(eval["train_strategy"], "temp");
  EXPECT_EQ(eval["metrics"]["strategy"], "temp");
  EXPECT_TRUE(eval.contains("relation_blind_bound"));
  EXPECT_FALSE(eval["per_query"].empty());

  const auto md = slurp(w / "reports/report.md");
  EXPECT_NE(md.find("Train \\ Eval"), std::string::npos);
  EXPECT_NE(md.find("| GT5 | Modules |"), std::string::npos);
  EXPECT_NE(slurp(w / "reports/report.csv").find("model,train,strategy"), std::string::npos);
}

TEST(Cli, TrainingTwiceGivesTheSameCheckpoint) {
  const auto d = fresh_dir("determinism");
  ASSERT_EQ(vog_cli(d, "synth " + kSmall).code, 0);
  const auto a = vog_cli(d, "train " + kSmall + "--set checkpoints=a");
  const auto b = vog_cli(d, "train " + kSmall + "--set checkpoints=b");
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(slurp(d / "a/last.ckpt"), slurp(d / "b/last.ckpt"));
  EXPECT_EQ(a.out.substr(a.out.rfind("hash")), b.out.substr(b.out.rfind("hash")));
}

TEST(Cli, ExitCodes) {
  const auto d = fresh_dir("codes");
  EXPECT_EQ(vog_cli(d, "").code, 2);
  EXPECT_EQ(vog_cli(d, "train --no-such-flag").code, 2);
  EXPECT_EQ(vog_cli(d, "train --strategy sideways").code, 2);
  EXPECT_EQ(vog_cli(d, "train --model imggrnd --rpe on " + kSmall).code, 2);
  EXPECT_EQ(vog_cli(d, "synth", "VOG_THETA=2").code, 2);

  const auto missing = vog_cli(d, "train --set corpus=absent/corpus.jsonl");
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.out.find("absent/corpus.jsonl"), std::string::npos) << missing.out;

  ASSERT_EQ(vog_cli(d, "synth " + kSmall).code, 0);
  const auto no_ckpt = vog_cli(d, "eval " + kSmall);
  EXPECT_EQ(no_ckpt.code, 3);
  EXPECT_NE(no_ckpt.out.find("last.ckpt"), std::string::npos) << no_ckpt.out;

  const auto empty = vog_cli(d, "report --set reports=empty");
  EXPECT_EQ(empty.code, 4);
  EXPECT_FALSE(fs::exists(d / "empty"));
}

TEST(Cli, ConfigFileEnvironmentAndFlagsLayer) {
  const auto d = fresh_dir("layers");
  {
    std::ofstream cfg(d / "run.cfg");
    cfg << "n_train = 6\nn_eval = 6\nseed = 1\ncorpus = from_file.jsonl\n";
  }
  auto r = vog_cli(d, "synth --config run.cfg --set features=f");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(json::parse(slurp(d / "from_file.jsonl.manifest.json"))["seed"], 1);
  r = vog_cli(d, "synth --config run.cfg --set features=f", "VOG_SEED=2");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(json::parse(slurp(d / "from_file.jsonl.manifest.json"))["seed"], 2);
  r = vog_cli(d, "synth --config run.cfg --set features=f --seed 3", "VOG_SEED=2");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(json::parse(slurp(d / "from_file.jsonl.manifest.json"))["seed"], 3);
}

TEST(Cli, GradientCheckPasses) {
  const auto d = fresh_dir("gradcheck");
  const auto r = vog_cli(d, "gradcheck --set out=g.json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto g = json::parse(slurp(d / "g.json"));
  EXPECT_TRUE(g["model"]["passed"].get<bool>());
  EXPECT_GT(g["operators"].size(), 20u);
}
