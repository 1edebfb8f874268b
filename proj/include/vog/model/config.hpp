#pragma once

#include <cstddef>
#include <string>

#include "vog/error.hpp"

namespace vog {

// kAblation allows any combination of the module switches below; the three
// named variants pin them.
enum class Variant { kImgGrnd, kVidGrnd, kVogNet, kAblation };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kImgGrnd: return "imggrnd";
    case Variant::kVidGrnd: return "vidgrnd";
    case Variant::kVogNet: return "vognet";
    case Variant::kAblation: return "ablation";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "imggrnd") return Variant::kImgGrnd;
  if (s == "vidgrnd") return Variant::kVidGrnd;
  if (s == "vognet") return Variant::kVogNet;
  if (s == "ablation") return Variant::kAblation;
  throw ConfigError("unknown model '" + s + "' (expected imggrnd, vidgrnd or vognet)");
}

enum class Profile { kDesk, kPaper };

inline Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::kDesk;
  if (s == "paper") return Profile::kPaper;
  throw ConfigError("unknown profile '" + s + "' (expected desk or paper)");
}

struct ModelConfig {
  std::size_t d_word = 32;
  std::size_t d_hidden = 64;  // per direction of the recurrent encoder
  std::size_t d_q = 16;
  std::size_t d_v = 0;
  std::size_t d_s = 0;
  std::size_t d_fused = 48;
  std::size_t n_l = 1;
  std::size_t n_h = 3;
  std::size_t ff_mult = 4;
  std::size_t mp_hidden = 16;  // hidden width of the relative-position MLP
  double mp_init_gain = 30;    // first-layer init scale of that MLP
  std::size_t max_seq_len = 20;
  double ln_eps = 1e-9;

  Variant variant = Variant::kVogNet;
  bool otx = true;       // object transformer
  bool mtx = true;       // multi-modal transformer
  bool rpe = true;       // relative position bias in every transformer present
  bool abs_pos = false;  // absolute position embedding added to visual features
  bool verb_head = false;

  // Size of one attention head for a model width d. Widths that do not split
  // evenly round up; the output projection maps back to d.
  std::size_t head_dim(std::size_t d) const { return (d + n_h - 1) / n_h; }
  std::size_t d_mm() const { return d_fused + d_q; }

  void validate() const {
    if (d_v == 0 || d_s == 0) throw ConfigError("d_v and d_s must be set");
    if (d_word == 0 || d_hidden == 0 || d_q == 0 || d_fused == 0) throw ConfigError("model widths must be positive");
    if (d_fused % 2 != 0) throw ConfigError("d_fused must be even (object and segment halves)");
    if (n_h == 0 || n_h > d_fused) throw ConfigError("n_h must be in [1, d_fused]");
    if (n_l == 0) throw ConfigError("n_l must be positive");
    if (!(mp_init_gain > 0)) throw ConfigError("mp_init_gain must be positive");
    switch (variant) {
      case Variant::kVogNet:
        if (!otx || !mtx) throw ConfigError("vognet needs both transformers");
        break;
      case Variant::kVidGrnd:
        if (!otx || mtx) throw ConfigError("vidgrnd has the object transformer only");
        if (rpe) throw ConfigError("vidgrnd does not use relative position encoding");
        break;
      case Variant::kImgGrnd:
        if (otx || mtx) throw ConfigError("imggrnd has no transformer");
        if (rpe) throw ConfigError("imggrnd does not use relative position encoding");
        break;
      case Variant::kAblation:
        if (rpe && !otx && !mtx) throw ConfigError("relative position encoding needs a transformer");
        break;
    }
  }
};

// Named variant at a given dimension profile.
inline ModelConfig make_model_config(Variant v, Profile profile, std::size_t d_v, std::size_t d_s) {
  ModelConfig c;
  if (profile == Profile::kPaper) {
    c.d_word = 512;
    c.d_hidden = 1024;
    c.d_q = 256;
    c.d_fused = 1024;
    c.max_seq_len = 40;
  }
  c.d_v = d_v;
  c.d_s = d_s;
  c.variant = v;
  switch (v) {
    case Variant::kImgGrnd:
      c.otx = c.mtx = c.rpe = c.abs_pos = false;
      break;
    case Variant::kVidGrnd:
      c.otx = true;
      c.mtx = c.rpe = false;
      c.abs_pos = true;
      break;
    case Variant::kVogNet:
    case Variant::kAblation:
      c.otx = c.mtx = c.rpe = true;
      c.abs_pos = false;
      break;
  }
  return c;
}

}  // namespace vog
