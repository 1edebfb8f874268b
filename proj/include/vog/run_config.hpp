#pragma once

// Run configuration for the command line tool: line-based key=value files,
// VOG_<KEY> environment overrides, a hash over the settings that affect
// results, and the manifest stamped into every output.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vog/assembly.hpp"
#include "vog/error.hpp"
#include "vog/eval.hpp"
#include "vog/model/config.hpp"
#include "vog/synthworld.hpp"
#include "vog/train.hpp"

namespace vog {

inline constexpr const char* kArtifactVersion = "vog-artifact-1";

struct RunConfig {
  // paths
  std::string corpus = "work/corpus.jsonl";
  std::string features = "work/features";
  std::string clean_features;  // optional noise-free twin written by synth
  std::string checkpoints = "work/checkpoints";
  std::string reports = "work/reports";
  std::string checkpoint;  // checkpoint to evaluate; defaults to <checkpoints>/last.ckpt
  std::string sets;        // contrastive sets for assemble; defaults to <reports>/sets.jsonl
  std::string out;         // explicit output path of a single-output command
  std::string inputs;      // comma-separated eval reports for report; defaults to all in <reports>

  // experiment
  Strategy strategy = Strategy::kSpat;
  Variant model = Variant::kVogNet;
  Profile profile = Profile::kDesk;
  std::optional<bool> rpe, otx, mtx;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<double> theta;  // defaults to 0.2 with GT5 proposals, 0.1 with all proposals
  std::size_t k_max = kMaxVideos;
  std::size_t jobs = 1;
  SamplingMode sampling = SamplingMode::kContrastive;
  std::size_t gt5 = 5;  // proposals kept per frame; 0 keeps all
  Split split = Split::kTest;
  int query = -1;  // assemble: one query id, or -1 for the whole split
  std::optional<std::size_t> n_layers;
  std::size_t grad_coords = 512;  // gradcheck: coordinates sampled per tensor; 0 checks all

  // synthetic world
  std::size_t n_train = 64;
  std::size_t n_eval = 32;
  std::size_t frames = 1;
  std::size_t proposals = 7;
  std::size_t clones = 1;
  double sigma = 0.0;
  double val_fraction = 0.0;

  // Defaults: 10 epochs at 1e-4 for the paper profile; the desk profile
  // trains the small model longer at a higher rate.
  std::size_t effective_epochs() const { return epochs.value_or(profile == Profile::kPaper ? 10 : 250); }
  double effective_theta() const { return theta.value_or(gt5 ? 0.2 : 0.1); }
  double effective_lr() const { return lr.value_or(profile == Profile::kPaper ? 1e-4 : 1e-3); }

  std::string checkpoint_path() const {
    return checkpoint.empty() ? (std::filesystem::path(checkpoints) / "last.ckpt").string() : checkpoint;
  }
  std::string sets_path() const {
    return sets.empty() ? (std::filesystem::path(reports) / "sets.jsonl").string() : sets;
  }

  WorldConfig world() const {
    WorldConfig w;
    w.n_train = n_train;
    w.n_eval = n_eval;
    w.F = frames;
    w.P = proposals;
    w.clones = clones;
    w.sigma = sigma;
    w.val_fraction = val_fraction;
    w.seed = seed;
    return w;
  }

  ModelConfig model_config(std::size_t d_v, std::size_t d_s) const {
    auto c = make_model_config(model, profile, d_v, d_s);
    if (n_layers) c.n_l = *n_layers;
    if (otx) c.otx = *otx;
    if (mtx) c.mtx = *mtx;
    if (rpe) c.rpe = *rpe;
    // Switching off a module of the full model makes it an ablation.
    if (model == Variant::kVogNet && !(c.otx && c.mtx && c.rpe)) c.variant = Variant::kAblation;
    c.verb_head = strategy == Strategy::kSep;
    c.validate();
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected on or off, got '" + v + "'");
}

inline std::string switch_str(const std::optional<bool>& b) { return b ? (*b ? "on" : "off") : "default"; }

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (used != v.size() || x < 0) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (used != v.size() || !std::isfinite(x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

inline std::string real_str(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

struct Field {
  bool affects_results;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::map<std::string, Field>& fields() {
  using R = RunConfig;
  static const std::map<std::string, Field> f = {
      {"corpus", {false, [](R& c, const std::string& v) { c.corpus = v; }, [](const R& c) { return c.corpus; }}},
      {"features", {false, [](R& c, const std::string& v) { c.features = v; }, [](const R& c) { return c.features; }}},
      {"clean_features",
       {false, [](R& c, const std::string& v) { c.clean_features = v; }, [](const R& c) { return c.clean_features; }}},
      {"checkpoints",
       {false, [](R& c, const std::string& v) { c.checkpoints = v; }, [](const R& c) { return c.checkpoints; }}},
      {"reports", {false, [](R& c, const std::string& v) { c.reports = v; }, [](const R& c) { return c.reports; }}},
      {"checkpoint",
       {false, [](R& c, const std::string& v) { c.checkpoint = v; }, [](const R& c) { return c.checkpoint; }}},
      {"sets", {false, [](R& c, const std::string& v) { c.sets = v; }, [](const R& c) { return c.sets; }}},
      {"out", {false, [](R& c, const std::string& v) { c.out = v; }, [](const R& c) { return c.out; }}},
      {"inputs", {false, [](R& c, const std::string& v) { c.inputs = v; }, [](const R& c) { return c.inputs; }}},
      {"jobs", {false, [](R& c, const std::string& v) { c.jobs = std::max<std::size_t>(1, parse_count("jobs", v)); },
                [](const R& c) { return std::to_string(c.jobs); }}},
      {"strategy", {true, [](R& c, const std::string& v) { c.strategy = parse_strategy(v); },
                    [](const R& c) { return strategy_name(c.strategy); }}},
      {"model", {true, [](R& c, const std::string& v) { c.model = parse_variant(v); },
                 [](const R& c) { return variant_name(c.model); }}},
      {"profile", {true, [](R& c, const std::string& v) { c.profile = parse_profile(v); },
                   [](const R& c) { return std::string(c.profile == Profile::kDesk ? "desk" : "paper"); }}},
      {"rpe", {true, [](R& c, const std::string& v) { c.rpe = parse_switch("rpe", v); },
               [](const R& c) { return switch_str(c.rpe); }}},
      {"otx", {true, [](R& c, const std::string& v) { c.otx = parse_switch("otx", v); },
               [](const R& c) { return switch_str(c.otx); }}},
      {"mtx", {true, [](R& c, const std::string& v) { c.mtx = parse_switch("mtx", v); },
               [](const R& c) { return switch_str(c.mtx); }}},
      {"seed", {true, [](R& c, const std::string& v) { c.seed = parse_count("seed", v); },
                [](const R& c) { return std::to_string(c.seed); }}},
      {"epochs", {true, [](R& c, const std::string& v) { c.epochs = parse_count("epochs", v); },
                  [](const R& c) { return std::to_string(c.effective_epochs()); }}},
      {"lr", {true,
              [](R& c, const std::string& v) {
                c.lr = parse_real("lr", v);
                if (!(*c.lr > 0)) throw ConfigError("lr must be positive");
              },
              [](const R& c) { return real_str(c.effective_lr()); }}},
      {"theta", {true,
                 [](R& c, const std::string& v) {
                   c.theta = parse_real("theta", v);
                   Thresholds{*c.theta}.check();
                 },
                 [](const R& c) { return real_str(c.effective_theta()); }}},
      {"k_max", {true,
                 [](R& c, const std::string& v) {
                   c.k_max = parse_count("k_max", v);
                   if (c.k_max < 1 || c.k_max > kMaxVideos)
                     throw ConfigError("k_max must be in [1," + std::to_string(kMaxVideos) + "]");
                 },
                 [](const R& c) { return std::to_string(c.k_max); }}},
      {"sampling", {true, [](R& c, const std::string& v) { c.sampling = parse_sampling(v); },
                    [](const R& c) { return sampling_name(c.sampling); }}},
      {"gt5", {true, [](R& c, const std::string& v) { c.gt5 = parse_count("gt5", v); },
               [](const R& c) { return std::to_string(c.gt5); }}},
      {"split", {true, [](R& c, const std::string& v) { c.split = parse_split(v); },
                 [](const R& c) { return split_name(c.split); }}},
      {"query", {true,
                 [](R& c, const std::string& v) {
                   c.query = v == "-1" ? -1 : static_cast<int>(parse_count("query", v));
                 },
                 [](const R& c) { return std::to_string(c.query); }}},
      {"grad_coords", {true, [](R& c, const std::string& v) { c.grad_coords = parse_count("grad_coords", v); },
                       [](const R& c) { return std::to_string(c.grad_coords); }}},
      {"n_layers", {true,
                    [](R& c, const std::string& v) {
                      c.n_layers = parse_count("n_layers", v);
                      if (*c.n_layers == 0) throw ConfigError("n_layers must be positive");
                    },
                    [](const R& c) { return c.n_layers ? std::to_string(*c.n_layers) : std::string("default"); }}},
      {"n_train", {true, [](R& c, const std::string& v) { c.n_train = parse_count("n_train", v); },
                   [](const R& c) { return std::to_string(c.n_train); }}},
      {"n_eval", {true, [](R& c, const std::string& v) { c.n_eval = parse_count("n_eval", v); },
                  [](const R& c) { return std::to_string(c.n_eval); }}},
      {"frames", {true, [](R& c, const std::string& v) { c.frames = parse_count("frames", v); },
                  [](const R& c) { return std::to_string(c.frames); }}},
      {"proposals", {true, [](R& c, const std::string& v) { c.proposals = parse_count("proposals", v); },
                     [](const R& c) { return std::to_string(c.proposals); }}},
      {"clones", {true, [](R& c, const std::string& v) { c.clones = parse_count("clones", v); },
                  [](const R& c) { return std::to_string(c.clones); }}},
      {"sigma", {true, [](R& c, const std::string& v) { c.sigma = parse_real("sigma", v); },
                 [](const R& c) { return real_str(c.sigma); }}},
      {"val_fraction", {true,
                        [](R& c, const std::string& v) {
                          c.val_fraction = parse_real("val_fraction", v);
                          if (c.val_fraction < 0 || c.val_fraction > 1)
                            throw ConfigError("val_fraction must be in [0,1]");
                        },
                        [](const R& c) { return real_str(c.val_fraction); }}},
  };
  return f;
}

}  // namespace detail

inline void set_option(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& f = detail::fields();
  const auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown key '" + key + "'");
  it->second.set(c, value);
}

// Applies "key = value" lines; '#' starts a comment. `origin` names the
// source in error messages.
inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value");
    const auto key = detail::trim(line.substr(0, eq));
    try {
      set_option(c, key, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + std::string(e.what()).substr(14));
    }
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(c, ss.str(), path);
}

// VOG_<KEY> (upper case) overrides the key. `getenv` is injectable for tests.
inline void apply_env(RunConfig& c, const std::function<const char*(const char*)>& getenv_fn =
                                        [](const char* k) { return std::getenv(k); }) {
  for (const auto& [key, field] : detail::fields()) {
    std::string name = "VOG_" + key;
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
    if (const char* v = getenv_fn(name.c_str())) set_option(c, key, v);
  }
}

// Canonical "key=value" lines of every setting that can change a result.
// Paths and the job count are left out, so the same experiment written to
// another directory hashes the same.
inline std::string canonical_settings(const RunConfig& c) {
  std::string out;
  for (const auto& [key, field] : detail::fields())
    if (field.affects_results) out += key + "=" + field.get(c) + "\n";
  return out;
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string config_hash(const RunConfig& c) { return fnv1a_hex(canonical_settings(c)); }

inline nlohmann::json make_manifest(const RunConfig& c, const std::string& command) {
  nlohmann::json m;
  m["artifact_version"] = kArtifactVersion;
  m["command"] = command;
  m["config_hash"] = config_hash(c);
  m["seed"] = c.seed;
  return m;
}

// --- serialization of model settings and metrics --------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"d_word", c.d_word},   {"d_hidden", c.d_hidden},   {"d_q", c.d_q},
          {"d_v", c.d_v},         {"d_s", c.d_s},             {"d_fused", c.d_fused},
          {"n_l", c.n_l},         {"n_h", c.n_h},             {"ff_mult", c.ff_mult},
          {"mp_hidden", c.mp_hidden}, {"mp_init_gain", c.mp_init_gain}, {"max_seq_len", c.max_seq_len},
          {"ln_eps", c.ln_eps},   {"variant", variant_name(c.variant)}, {"otx", c.otx},
          {"mtx", c.mtx},         {"rpe", c.rpe},             {"abs_pos", c.abs_pos},
          {"verb_head", c.verb_head}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.d_word = j.at("d_word");
    c.d_hidden = j.at("d_hidden");
    c.d_q = j.at("d_q");
    c.d_v = j.at("d_v");
    c.d_s = j.at("d_s");
    c.d_fused = j.at("d_fused");
    c.n_l = j.at("n_l");
    c.n_h = j.at("n_h");
    c.ff_mult = j.at("ff_mult");
    c.mp_hidden = j.at("mp_hidden");
    c.mp_init_gain = j.at("mp_init_gain");
    c.max_seq_len = j.at("max_seq_len");
    c.ln_eps = j.at("ln_eps");
    c.variant = parse_variant(j.at("variant"));
    c.otx = j.at("otx");
    c.mtx = j.at("mtx");
    c.rpe = j.at("rpe");
    c.abs_pos = j.at("abs_pos");
    c.verb_head = j.at("verb_head");
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model settings: ") + e.what());
  }
}

// Module switches as a short label, e.g. "OTx+MTx+RPE".
inline std::string components_label(const ModelConfig& c) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(c.otx, "OTx");
  add(c.mtx, "MTx");
  add(c.rpe, "RPE");
  return s.empty() ? "none" : s;
}

inline nlohmann::json metrics_to_json(const MetricsReport& m) {
  nlohmann::json j;
  j["strategy"] = strategy_name(m.strategy);
  j["acc"] = m.acc;
  j["strict_acc"] = m.strict_acc;
  j["consistency"] = m.consistency ? nlohmann::json(*m.consistency) : nlohmann::json(nullptr);
  j["video_acc"] = m.video_acc ? nlohmann::json(*m.video_acc) : nlohmann::json(nullptr);
  j["queries"] = m.queries;
  j["roles"] = m.roles;
  return j;
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsReport m;
    m.strategy = parse_strategy(j.at("strategy"));
    m.acc = j.at("acc");
    m.strict_acc = j.at("strict_acc");
    if (!j.at("consistency").is_null()) m.consistency = j.at("consistency").get<double>();
    if (!j.at("video_acc").is_null()) m.video_acc = j.at("video_acc").get<double>();
    m.queries = j.at("queries");
    m.roles = j.at("roles");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics: ") + e.what());
  }
}

}  // namespace vog
