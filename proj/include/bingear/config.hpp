#pragma once

// Flat key=value run configuration. One pair per line, '#' starts a comment,
// unknown keys are rejected. Defaults follow the MovieLens column of the
// published hyper-parameter table.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "bingear/error.hpp"
#include "bingear/random.hpp"
#include "bingear/trainer.hpp"

namespace bingear {

struct RunConfig {
  std::string data;  // directory holding dataset.bgds
  std::string out;   // output directory for checkpoints and logs
  unsigned threads = 0;
  TrainConfig train;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) fail(ErrorKind::usage, "config: bad value for " + key + ": '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  fail(ErrorKind::usage, "config: bad boolean for " + key + ": '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter number(T TrainConfig::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.*field = parse_number<T>(k, v);
  };
}

inline Setter flag(bool Ablation::*field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) {
    c.train.ablation.*field = parse_bool(k, v);
  };
}

inline const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = {
      {"data", [](RunConfig& c, const std::string&, const std::string& v) { c.data = v; }},
      {"out", [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; }},
      {"threads",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.threads = parse_number<unsigned>(k, v); }},
      {"deterministic",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.deterministic = parse_bool(k, v); }},
      {"dim", number(&TrainConfig::dim)},
      {"layers", number(&TrainConfig::layers)},
      {"batch_size", number(&TrainConfig::batch_size)},
      {"lr", number(&TrainConfig::lr)},
      {"reg", number(&TrainConfig::reg)},
      {"lambda1", number(&TrainConfig::lambda1)},
      {"lambda2", number(&TrainConfig::lambda2)},
      {"J", number(&TrainConfig::J)},
      {"c", number(&TrainConfig::c)},
      {"R", number(&TrainConfig::R)},
      {"gamma", number(&TrainConfig::gamma)},
      {"epochs", number(&TrainConfig::epochs)},
      {"student_epochs", number(&TrainConfig::student_epochs)},
      {"eval_every", number(&TrainConfig::eval_every)},
      {"patience", number(&TrainConfig::patience)},
      {"val_fraction", number(&TrainConfig::val_fraction)},
      {"seed", number(&TrainConfig::seed)},
      {"init_scale", number(&TrainConfig::init_scale)},
      {"disable_id1", flag(&Ablation::disable_id1)},
      {"disable_id2", flag(&Ablation::disable_id2)},
      {"disable_synth_teacher", flag(&Ablation::disable_synth_teacher)},
      {"disable_synth_student", flag(&Ablation::disable_synth_student)},
  };
  return keys;
}

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text, const std::string& origin = "config") {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) fail(ErrorKind::usage, where + ": expected key=value");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    const auto& keys = detail::config_keys();
    const auto it = keys.find(key);
    if (it == keys.end()) fail(ErrorKind::usage, where + ": unknown key '" + key + "'");
    try {
      it->second(cfg, key, value);
    } catch (const Error& e) {
      fail(ErrorKind::usage, where + ": " + e.what());
    }
  }
  cfg.train.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::usage, "cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), path);
}

// Canonical text of every setting that influences training results; paths
// and the thread count are left out.
inline std::string canonical_config(const TrainConfig& t) {
  std::ostringstream os;
  os.precision(17);
  os << "dim=" << t.dim << "\nlayers=" << t.layers << "\nbatch_size=" << t.batch_size << "\nlr=" << t.lr
     << "\nreg=" << t.reg << "\nlambda1=" << t.lambda1 << "\nlambda2=" << t.lambda2 << "\nJ=" << t.J << "\nc=" << t.c
     << "\nR=" << t.R << "\ngamma=" << t.gamma << "\nepochs=" << t.epochs << "\nstudent_epochs=" << t.student_epochs
     << "\neval_every=" << t.eval_every << "\npatience=" << t.patience << "\nval_fraction=" << t.val_fraction
     << "\nseed=" << t.seed << "\ninit_scale=" << t.init_scale << "\ndeterministic=" << t.deterministic
     << "\ndisable_id1=" << t.ablation.disable_id1 << "\ndisable_id2=" << t.ablation.disable_id2
     << "\ndisable_synth_teacher=" << t.ablation.disable_synth_teacher
     << "\ndisable_synth_student=" << t.ablation.disable_synth_student << "\n";
  return os.str();
}

// Hash of the canonical settings, optionally chained onto a dataset digest.
inline std::uint64_t config_hash(const TrainConfig& t, std::uint64_t data_digest = 0) {
  std::uint64_t h = fnv1a64(canonical_config(t));
  if (data_digest != 0) {
    h ^= data_digest;
    h = splitmix64_step(h);
  }
  return h;
}

}  // namespace bingear
