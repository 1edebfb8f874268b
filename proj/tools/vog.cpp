// Command line front end: synthetic data, indexing, sampling, assembly,
// training, evaluation, gradient checks and report tables.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vog/ad/op_suite.hpp"
#include "vog/ad/params.hpp"
#include "vog/model/micro.hpp"
#include "vog/run_config.hpp"
#include "vog/synthworld.hpp"
#include "vog/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vog;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const std::string& path, const std::string& data) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

// Non-JSON outputs carry their manifest in a sidecar file.
void write_with_manifest(const std::string& path, const std::string& data, const json& manifest) {
  write_bytes(path, data);
  write_bytes(path + ".manifest.json", manifest.dump(2) + "\n");
}

void require(const std::string& path, const std::string& what, const std::string& hint) {
  if (!fs::exists(path)) throw DataError("missing " + what + " '" + path + "' (" + hint + ")");
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

struct Inputs {
  Corpus corpus;
  FeatureStore store;
};

Inputs load_inputs(const RunConfig& c, bool features = true) {
  require(c.corpus, "corpus", "run `vog synth` or point corpus= at a JSONL file");
  Inputs in;
  in.corpus = load_corpus(c.corpus);
  if (features) {
    require(c.features, "feature directory", "run `vog synth` or point features= at VOGF files");
    in.store = load_store(in.corpus, c.features);
    if (c.gt5) in.store = apply_gt5(in.store, in.corpus, c.gt5);
  }
  return in;
}

std::pair<std::size_t, std::size_t> feature_dims(const FeatureStore& store) {
  if (store.empty()) throw DataError("feature store is empty");
  return {store.begin()->second.d_v, store.begin()->second.d_s};
}

SplitSelector selector_for(const Corpus& corpus, Split split) {
  return split == Split::kTrain ? SplitSelector::train() : SplitSelector::eval(corpus, split);
}

std::uint64_t stream_seed(const RunConfig& c, int query_id) {
  return derive_seed({c.seed, 0xe7a1ULL, static_cast<std::uint64_t>(query_id)});
}

// --- commands --------------------------------------------------------------------

int cmd_synth(const RunConfig& c) {
  const auto w = gen_world(c.world());
  const auto manifest = make_manifest(c, "synth");
  std::ostringstream corpus;
  for (const auto& q : w.corpus.queries) corpus << query_to_json(q, w.corpus.videos.at(q.video_id)).dump() << '\n';
  write_with_manifest(c.corpus, corpus.str(), manifest);
  save_store(w.store, c.features);
  write_bytes(join(c.features, "manifest.json"), manifest.dump(2) + "\n");
  if (!c.clean_features.empty()) {
    save_store(w.clean_store, c.clean_features);
    write_bytes(join(c.clean_features, "manifest.json"), manifest.dump(2) + "\n");
  }
  std::cout << "synth: " << w.corpus.queries.size() << " queries, " << w.store.size() << " videos -> " << c.corpus
            << ", " << c.features << "\n";
  return 0;
}

int cmd_index(const RunConfig& c) {
  const auto in = load_inputs(c, false);
  const auto index = build_index(in.corpus, selector_for(in.corpus, c.split));
  const auto path = c.out.empty() ? join(c.reports, "index.json") : c.out;
  write_with_manifest(path, index.to_json().dump(2) + "\n", make_manifest(c, "index"));
  std::cout << "index: " << index.dicts.size() << " roles -> " << path << "\n";
  return 0;
}

int cmd_sample(const RunConfig& c) {
  const auto in = load_inputs(c, false);
  const auto index = build_index(in.corpus, selector_for(in.corpus, c.split));
  std::ostringstream out;
  std::size_t n = 0;
  for (const auto* q : queries_of(in.corpus, c.split)) {
    if (c.query >= 0 && q->id != c.query) continue;
    Rng rng(stream_seed(c, q->id));
    out << draw_set(index, *q, c.strategy, c.sampling, c.k_max, rng).to_json().dump() << '\n';
    ++n;
  }
  if (n == 0) throw DataError("no queries in split '" + split_name(c.split) + "' to sample");
  const auto path = c.sets_path();
  write_with_manifest(path, out.str(), make_manifest(c, "sample"));
  std::cout << "sample: " << n << " sets -> " << path << "\n";
  return 0;
}

json sample_to_json(const AssembledSample& s) {
  json j;
  j["query"] = s.query.id;
  j["strategy"] = strategy_name(s.strategy);
  j["anchor_pos"] = s.anchor_pos;
  j["proposals_per_frame"] = s.num_proposals;
  j["frames"] = s.num_frames;
  j["canvas"] = {s.canvas_width, s.canvas_height};
  json videos = json::array();
  for (const auto& v : s.videos) {
    videos.push_back({{"video", v.video_id},
                      {"query", v.query_id},
                      {"offset_x", v.offset_x},
                      {"scale", {v.scale_x, v.scale_y}},
                      {"frames", {v.frame_begin, v.frame_end}}});
  }
  j["videos"] = videos;
  json boxes = json::array();
  for (std::size_t n = 0; n < s.num_items(); ++n) {
    const auto& b = s.boxes[n];
    boxes.push_back({b.x1, b.y1, b.x2, b.y2, b.frame, s.membership[n]});
  }
  j["boxes"] = boxes;
  json labels = json::object();
  for (std::size_t l = 0; l < s.num_roles(); ++l) {
    std::vector<std::size_t> pos;
    for (std::size_t n = 0; n < s.num_items(); ++n)
      if (s.label(l, n)) pos.push_back(n);
    labels[s.query.phrases[l].role.str()] = pos;
  }
  j["positives"] = labels;
  return j;
}

int cmd_assemble(const RunConfig& c) {
  const auto in = load_inputs(c);
  const auto sets_path = c.sets_path();
  require(sets_path, "contrastive sets", "run `vog sample` first");
  std::istringstream lines(read_bytes(sets_path));
  std::string line;
  std::ostringstream out;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(sets_path + ": " + e.what());
    }
    const auto set = ContrastiveSet::from_json(j);
    if (c.query >= 0 && set.anchor != c.query) continue;
    Rng rng(derive_seed({c.seed, 0xa55eULL, static_cast<std::uint64_t>(set.anchor)}));
    out << sample_to_json(assemble(c.strategy, set, in.corpus, in.store, rng)).dump() << '\n';
    ++n;
  }
  if (n == 0) throw DataError("no contrastive sets to assemble in '" + sets_path + "'");
  const auto path = c.out.empty() ? join(c.reports, "samples.jsonl") : c.out;
  write_with_manifest(path, out.str(), make_manifest(c, "assemble"));
  std::cout << "assemble: " << n << " samples -> " << path << "\n";
  return 0;
}

json checkpoint_manifest(const RunConfig& c, const ModelConfig& mc, const Vocabulary& vocab, std::size_t epoch) {
  auto m = make_manifest(c, "train");
  m["model"] = model_config_to_json(mc);
  m["vocab"] = vocab.words();
  m["train_strategy"] = strategy_name(c.strategy);
  m["gt5"] = c.gt5;
  m["epoch"] = epoch;
  return m;
}

int cmd_train(const RunConfig& c) {
  const auto in = load_inputs(c);
  const auto [d_v, d_s] = feature_dims(in.store);
  const auto mc = c.model_config(d_v, d_s);
  const auto vocab = Vocabulary::build(in.corpus);
  VogModel model(mc, vocab, c.seed);
  TrainConfig tc;
  tc.strategy = c.strategy;
  tc.sampling = c.sampling;
  tc.epochs = c.effective_epochs();
  tc.lr = c.effective_lr();
  tc.k = c.k_max;
  tc.seed = c.seed;
  fs::create_directories(c.checkpoints);
  json log = json::array();
  std::string last;
  train_model(model, in.corpus, in.store, tc, [&](const EpochStats& st) {
    last = ad::encode_checkpoint(model.params(), checkpoint_manifest(c, mc, vocab, st.epoch).dump());
    std::ostringstream name;
    name << "epoch_" << std::setw(3) << std::setfill('0') << st.epoch << ".ckpt";
    write_bytes(join(c.checkpoints, name.str()), last);
    write_bytes(join(c.checkpoints, "last.ckpt"), last);
    log.push_back({{"epoch", st.epoch}, {"mean_loss", st.mean_loss}, {"samples", st.samples}, {"skipped", st.skipped}});
    json doc;
    doc["manifest"] = make_manifest(c, "train");
    doc["epochs"] = log;
    write_bytes(join(c.checkpoints, "loss.json"), doc.dump(2) + "\n");
    std::cout << "epoch " << st.epoch << " loss " << st.mean_loss << "\n";
  });
  std::cout << "train: " << variant_name(mc.variant) << " (" << components_label(mc) << ") on "
            << strategy_name(c.strategy) << ", checkpoint hash " << fnv1a_hex(last) << "\n";
  return 0;
}

struct LoadedModel {
  ModelConfig config;
  json manifest;
  std::unique_ptr<VogModel> model;
};

LoadedModel load_model(const std::string& path) {
  require(path, "checkpoint", "run `vog train` first or set checkpoint=");
  const auto ck = ad::decode_checkpoint(read_bytes(path));
  LoadedModel lm;
  try {
    lm.manifest = json::parse(ck.manifest);
  } catch (const json::exception& e) {
    throw DataError("checkpoint '" + path + "': unreadable manifest: " + e.what());
  }
  if (!lm.manifest.contains("model") || !lm.manifest.contains("vocab"))
    throw DataError("checkpoint '" + path + "' lacks model settings");
  lm.config = model_config_from_json(lm.manifest["model"]);
  lm.model = std::make_unique<VogModel>(lm.config, Vocabulary::from_list(lm.manifest["vocab"]), 0);
  ad::load_into(ck, lm.model->params());
  return lm;
}

int cmd_eval(const RunConfig& c) {
  const auto in = load_inputs(c);
  const auto lm = load_model(c.checkpoint_path());
  EvalConfig ec;
  ec.strategy = c.strategy;
  ec.sampling = c.sampling;
  ec.thresholds.theta = c.effective_theta();
  ec.k = c.k_max;
  ec.split = c.split;
  ec.seed = c.seed;
  ec.jobs = c.jobs;
  const auto r = evaluate_model(*lm.model, in.corpus, in.store, ec);
  json doc;
  doc["manifest"] = make_manifest(c, "eval");
  doc["model"] = variant_name(lm.config.variant);
  doc["components"] = components_label(lm.config);
  doc["train_strategy"] = lm.manifest.value("train_strategy", "");
  doc["trained_config_hash"] = lm.manifest.value("config_hash", "");
  doc["gt5"] = c.gt5 > 0;
  doc["theta"] = c.effective_theta();
  doc["metrics"] = metrics_to_json(r.report);
  if (!c.clean_features.empty()) {
    require(c.clean_features, "noise-free feature directory", "run `vog synth` with clean_features=");
    auto clean = load_store(in.corpus, c.clean_features);
    if (c.gt5) clean = apply_gt5(clean, in.corpus, c.gt5);
    const auto b = relation_blind_bound(eval_samples(in.corpus, clean, ec));
    doc["relation_blind_bound"] = {{"strict_acc", b.strict}, {"acc", b.acc}};
  }
  json per = json::array();
  for (const auto& q : r.per_query) {
    json jq{{"query", q.query_id}, {"roles", q.roles}, {"correct", q.correct}};
    if (q.consistent) jq["consistent"] = *q.consistent;
    if (q.video_correct) jq["video_correct"] = *q.video_correct;
    per.push_back(jq);
  }
  doc["per_query"] = per;
  const auto path = c.out.empty() ? join(c.reports, "eval_" + variant_name(lm.config.variant) + "-" +
                                                         components_label(lm.config) + "_" +
                                                         doc["train_strategy"].get<std::string>() + "_" +
                                                         strategy_name(c.strategy) + ".json")
                                  : c.out;
  write_bytes(path, doc.dump(2) + "\n");
  std::cout << "eval " << strategy_name(c.strategy) << ": acc " << r.report.acc << " strict " << r.report.strict_acc
            << " -> " << path << "\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& c) {
  ad::GradCheckOptions opt;
  opt.max_coords_per_tensor = c.grad_coords;
  opt.seed = c.seed;
  bool ok = true;
  json doc;
  doc["manifest"] = make_manifest(c, "gradcheck");
  json ops = json::array();
  for (const auto& oc : ad::check_operators(c.seed, opt)) {
    ops.push_back({{"op", oc.op}, {"max_rel_error", oc.report.max_rel_error}, {"passed", oc.report.passed}});
    ok = ok && oc.report.passed;
    std::cout << (oc.report.passed ? "PASS " : "FAIL ") << oc.op << " max rel error " << oc.report.max_rel_error
              << "\n";
  }
  doc["operators"] = ops;
  const auto rep = micro_model_gradcheck(c.seed, opt);
  doc["model"] = {{"max_rel_error", rep.max_rel_error}, {"checked", rep.checked}, {"passed", rep.passed}};
  ok = ok && rep.passed;
  std::cout << (rep.passed ? "PASS " : "FAIL ") << "micro model (" << rep.checked << " coordinates) max rel error "
            << rep.max_rel_error << "\n";
  if (!c.out.empty()) write_bytes(c.out, doc.dump(2) + "\n");
  if (!ok) throw ContractError("gradient check failed");
  return 0;
}

std::vector<std::string> report_inputs(const RunConfig& c) {
  std::vector<std::string> paths;
  if (!c.inputs.empty()) {
    std::stringstream ss(c.inputs);
    std::string p;
    while (std::getline(ss, p, ','))
      if (!p.empty()) paths.push_back(p);
  } else if (fs::is_directory(c.reports)) {
    for (const auto& e : fs::directory_iterator(c.reports)) {
      const auto name = e.path().filename().string();
      if (name.rfind("eval_", 0) == 0 && e.path().extension() == ".json") paths.push_back(e.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

int cmd_report(const RunConfig& c) {
  std::vector<ReportRow> rows;
  for (const auto& p : report_inputs(c)) {
    require(p, "evaluation report", "run `vog eval` first");
    json j;
    try {
      j = json::parse(read_bytes(p));
    } catch (const json::exception& e) {
      throw DataError(p + ": " + e.what());
    }
    ReportRow r;
    r.model = j.value("model", "");
    r.train_strategy = j.value("train_strategy", "");
    r.components = j.value("components", "");
    r.gt5 = j.value("gt5", true);
    r.metrics = metrics_from_json(j.at("metrics"));
    rows.push_back(r);
  }
  // Everything is rendered before anything is written, so an empty or bad
  // input leaves no partial output behind.
  const auto csv = render_csv(rows);
  std::ostringstream md;
  md << "# Results\n\n" << render_markdown(rows) << "\n## Strict accuracy, train x eval strategy\n\n"
     << render_cross_matrix(rows, true) << "\n## Accuracy, train x eval strategy\n\n"
     << render_cross_matrix(rows, false) << "\n## Module ablations\n\n" << render_ablation(rows, Strategy::kSpat);
  const auto base = c.out.empty() ? join(c.reports, "report") : c.out;
  const auto manifest = make_manifest(c, "report");
  write_with_manifest(base + ".csv", csv, manifest);
  write_with_manifest(base + ".md", md.str(), manifest);
  std::cout << "report: " << rows.size() << " rows -> " << base << ".csv, " << base << ".md\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video object grounding with contrastive sampling and relative position encoding"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy, model, rpe, profile;
  std::optional<double> theta;
  std::optional<std::size_t> jobs;
  app.add_option("--config", config_file, "key=value configuration file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--strategy", strategy, "svsq, sep, temp or spat");
  app.add_option("--model", model, "imggrnd, vidgrnd or vognet");
  app.add_option("--rpe", rpe, "relative position encoding: on or off");
  app.add_option("--theta", theta, "score threshold for boxes outside the anchor video");
  app.add_option("--jobs", jobs, "evaluation threads");
  app.add_option("--profile", profile, "desk or paper dimensions");
  app.add_option("--set", sets, "extra key=value setting (repeatable)");

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
  };
  const std::vector<Command> commands{
      {"synth", "generate a synthetic world (corpus and features)", cmd_synth},
      {"index", "build the role/lemma index", cmd_index},
      {"sample", "draw contrastive sets", cmd_sample},
      {"assemble", "assemble samples from contrastive sets", cmd_assemble},
      {"train", "train a model", cmd_train},
      {"eval", "evaluate a checkpoint", cmd_eval},
      {"gradcheck", "finite-difference check of operators and the model", cmd_gradcheck},
      {"report", "render CSV and markdown tables from evaluation reports", cmd_report},
  };
  for (const auto& cmd : commands) app.add_subcommand(cmd.name, cmd.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kConfig);
  }

  try {
    RunConfig c;
    if (!config_file.empty()) apply_config_file(c, config_file);
    apply_env(c);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_option(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) set_option(c, "seed", std::to_string(*seed));
    if (strategy) set_option(c, "strategy", *strategy);
    if (model) set_option(c, "model", *model);
    if (rpe) set_option(c, "rpe", *rpe);
    if (theta) {
      std::ostringstream os;
      os << std::setprecision(17) << *theta;
      set_option(c, "theta", os.str());
    }
    if (jobs) set_option(c, "jobs", std::to_string(*jobs));
    if (profile) set_option(c, "profile", *profile);
    // Conflicting model settings are reported before any data is read.
    c.model_config(1, 1);
    validate_world_config(c.world());
    for (const auto& cmd : commands)
      if (app.got_subcommand(cmd.name)) return cmd.run(c);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return static_cast<int>(e.code());
  }
  return 0;
}
