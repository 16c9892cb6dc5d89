#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tokenlab/io.hpp"
#include "tokenlab/tensor.hpp"

namespace tokenlab {

// Every experiment knob, one flat key=value file with [section] grouping.
// Unknown keys are usage errors: a typo must never silently fall back to a
// default mid-sweep.
struct Config {
  // [data]
  std::size_t data_count = 4096;
  double data_epsilon = 0.15;  // factor-space pair radius

  // [tokenizer]
  std::size_t tok_k = 8;        // token count
  std::size_t tok_d = 4;        // per-token dimension
  std::size_t tok_width = 256;
  std::size_t tok_depth = 3;
  std::size_t tok_T = 64;       // diffusion steps (training)
  std::size_t tok_s_eval = 4;   // DDIM steps for differentiable decodes
  std::size_t tok_steps = 20000;
  std::size_t tok_batch = 16;
  std::size_t tok_holdout = 256;
  double tok_lr = 1e-3;
  double dsc_lr = 1e-3;

  // [losses]
  bool use_mi = true;
  bool use_swap = true;
  bool use_afm = true;
  double lambda_ot = 1.0;
  double swap_density = 0.5;
  bool renormalize_swap = true;

  // [diagnostics]
  std::size_t lso_steps = 100;
  std::size_t lso_restarts = 1;
  double lso_eta = 0.001;
  double mse_floor = 1e-12;
  std::size_t mc_grid = 17;
  double mc_delta = 1e-6;
  std::size_t avgig_images = 64;
  std::size_t mc_pairs = 100;

  // [generator]
  std::size_t gen_width = 64;
  std::size_t gen_heads = 4;
  std::size_t gen_blocks = 2;
  std::size_t gen_t_head = 64;
  std::size_t gen_ddim_steps = 8;
  std::size_t gen_steps = 8000;
  std::size_t gen_batch = 16;
  double gen_lr = 1e-3;
  double cfg_drop = 0.1;
  double cfg_scale = 1.0;
  std::size_t gen_sample_steps = 8;  // unmasking steps S at generation

  // [evaluation]
  std::uint64_t feature_seed = 1234;
  std::size_t eval_samples = 512;

  // [seeds]
  std::uint64_t seed_data = 0;
  std::uint64_t seed_tokenizer = 0;
  std::uint64_t seed_generator = 0;
  std::uint64_t seed_eval = 0;
};

// Field registry implemented with member pointers: parsing, serialization,
// and the known-key check all read the same table.
struct ConfigEntry {
  std::string section;
  std::string key;
  enum Kind { Size, Float, Flag, Seed } kind;
  std::size_t Config::* s = nullptr;
  double Config::* f = nullptr;
  bool Config::* b = nullptr;
  std::uint64_t Config::* u = nullptr;
};

inline const std::vector<ConfigEntry>& config_entries() {
  static const std::vector<ConfigEntry> entries = [] {
    std::vector<ConfigEntry> e;
    auto sz = [&](const char* sec, const char* key, std::size_t Config::* p) {
      e.push_back({sec, key, ConfigEntry::Size, p, nullptr, nullptr, nullptr});
    };
    auto fl = [&](const char* sec, const char* key, double Config::* p) {
      e.push_back({sec, key, ConfigEntry::Float, nullptr, p, nullptr, nullptr});
    };
    auto bo = [&](const char* sec, const char* key, bool Config::* p) {
      e.push_back({sec, key, ConfigEntry::Flag, nullptr, nullptr, p, nullptr});
    };
    auto se = [&](const char* sec, const char* key, std::uint64_t Config::* p) {
      e.push_back({sec, key, ConfigEntry::Seed, nullptr, nullptr, nullptr, p});
    };
    sz("data", "count", &Config::data_count);
    fl("data", "epsilon", &Config::data_epsilon);
    sz("tokenizer", "tokens", &Config::tok_k);
    sz("tokenizer", "token_dim", &Config::tok_d);
    sz("tokenizer", "width", &Config::tok_width);
    sz("tokenizer", "depth", &Config::tok_depth);
    sz("tokenizer", "diffusion_steps", &Config::tok_T);
    sz("tokenizer", "decode_steps", &Config::tok_s_eval);
    sz("tokenizer", "train_steps", &Config::tok_steps);
    sz("tokenizer", "batch", &Config::tok_batch);
    sz("tokenizer", "holdout", &Config::tok_holdout);
    fl("tokenizer", "learning_rate", &Config::tok_lr);
    fl("tokenizer", "discriminator_learning_rate", &Config::dsc_lr);
    bo("losses", "use_mi", &Config::use_mi);
    bo("losses", "use_swap", &Config::use_swap);
    bo("losses", "use_afm", &Config::use_afm);
    fl("losses", "lambda_ot", &Config::lambda_ot);
    fl("losses", "swap_density", &Config::swap_density);
    bo("losses", "renormalize_swap", &Config::renormalize_swap);
    sz("diagnostics", "lso_steps", &Config::lso_steps);
    sz("diagnostics", "lso_restarts", &Config::lso_restarts);
    fl("diagnostics", "lso_eta", &Config::lso_eta);
    fl("diagnostics", "mse_floor", &Config::mse_floor);
    sz("diagnostics", "mc_grid", &Config::mc_grid);
    fl("diagnostics", "mc_delta", &Config::mc_delta);
    sz("diagnostics", "avgig_images", &Config::avgig_images);
    sz("diagnostics", "mc_pairs", &Config::mc_pairs);
    sz("generator", "width", &Config::gen_width);
    sz("generator", "heads", &Config::gen_heads);
    sz("generator", "blocks", &Config::gen_blocks);
    sz("generator", "head_diffusion_steps", &Config::gen_t_head);
    sz("generator", "head_ddim_steps", &Config::gen_ddim_steps);
    sz("generator", "train_steps", &Config::gen_steps);
    sz("generator", "batch", &Config::gen_batch);
    fl("generator", "learning_rate", &Config::gen_lr);
    fl("generator", "cfg_drop", &Config::cfg_drop);
    fl("generator", "cfg_scale", &Config::cfg_scale);
    sz("generator", "sample_steps", &Config::gen_sample_steps);
    se("evaluation", "feature_seed", &Config::feature_seed);
    sz("evaluation", "samples", &Config::eval_samples);
    se("seeds", "data", &Config::seed_data);
    se("seeds", "tokenizer", &Config::seed_tokenizer);
    se("seeds", "generator", &Config::seed_generator);
    se("seeds", "eval", &Config::seed_eval);
    return e;
  }();
  return entries;
}

inline std::string config_value_str(const Config& c, const ConfigEntry& e) {
  switch (e.kind) {
    case ConfigEntry::Size: return std::to_string(c.*(e.s));
    case ConfigEntry::Float: return fmt_f64(c.*(e.f));
    case ConfigEntry::Flag: return (c.*(e.b)) ? "1" : "0";
    case ConfigEntry::Seed: return std::to_string(c.*(e.u));
  }
  return "";
}

inline void config_set(Config& c, const ConfigEntry& e, const std::string& raw,
                       const std::string& where) {
  try {
    std::size_t used = 0;
    switch (e.kind) {
      case ConfigEntry::Size: {
        long long v = std::stoll(raw, &used);
        if (used != raw.size() || v < 0) throw std::invalid_argument(raw);
        c.*(e.s) = std::size_t(v);
        return;
      }
      case ConfigEntry::Float: {
        double v = std::stod(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        c.*(e.f) = v;
        return;
      }
      case ConfigEntry::Flag: {
        if (raw == "1" || raw == "true") { c.*(e.b) = true; return; }
        if (raw == "0" || raw == "false") { c.*(e.b) = false; return; }
        throw std::invalid_argument(raw);
      }
      case ConfigEntry::Seed: {
        unsigned long long v = std::stoull(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        c.*(e.u) = v;
        return;
      }
    }
  } catch (const std::exception&) {
    throw TkError("config", where, "cannot parse value '" + raw + "'", 1);
  }
}

// Canonical text: sections in registry order, keys in registry order. The
// content hash is taken over this form so file formatting never changes it.
inline std::string serialize_config(const Config& c) {
  std::string out;
  std::string section;
  for (const auto& e : config_entries()) {
    if (e.section != section) {
      if (!section.empty()) out += "\n";
      section = e.section;
      out += "[" + section + "]\n";
    }
    out += e.key + "=" + config_value_str(c, e) + "\n";
  }
  return out;
}

inline std::string config_hash(const Config& c) { return hash_hex(serialize_config(c)); }

inline Config parse_config(const std::string& text) {
  Config c;
  std::string section;
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (start > text.size() && line.empty()) break;

    auto trim = [](std::string s) {
      std::size_t a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      std::size_t b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::string where = "line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw TkError("config", where, "unterminated section header", 1);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw TkError("config", where, "expected key=value", 1);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    const ConfigEntry* hit = nullptr;
    for (const auto& e : config_entries())
      if (e.section == section && e.key == key) hit = &e;
    if (!hit)
      throw TkError("config", section.empty() ? key : section + "." + key, "unknown key", 1);
    config_set(c, *hit, val, where);
  }
  return c;
}

inline Config load_config(const std::string& path) { return parse_config(read_file(path)); }

}  // namespace tokenlab
