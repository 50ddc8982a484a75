#include "kdiffe/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "kdiffe/errors.hpp"

namespace kdiffe {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw ParameterError("bad value for " + key + ": '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ParameterError("bad value for " + key + ": '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ParameterError("bad value for " + key + ": '" + s + "'");
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field number(T TrainConfig::*member) {
  Field f;
  if constexpr (std::is_floating_point_v<T>) {
    f.get = [member](const TrainConfig& c) { return fmt_double(c.*member); };
    f.set = [member](TrainConfig& c, const std::string& v) { c.*member = parse_double("value", v); };
  } else if constexpr (std::is_same_v<T, bool>) {
    f.get = [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); };
    f.set = [member](TrainConfig& c, const std::string& v) { c.*member = parse_bool("value", v); };
  } else {
    f.get = [member](const TrainConfig& c) { return std::to_string(c.*member); };
    f.set = [member](TrainConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_uint("value", v)); };
  }
  return f;
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> m;
    m["lr"] = number(&TrainConfig::lr);
    m["epochs"] = number(&TrainConfig::epochs);
    m["batch_size"] = number(&TrainConfig::batch_size);
    m["negatives"] = number(&TrainConfig::negatives);
    m["seed"] = number(&TrainConfig::seed);
    m["dim"] = number(&TrainConfig::dim);
    m["layers"] = number(&TrainConfig::layers);
    m["init_std"] = number(&TrainConfig::init_std);
    m["tau"] = number(&TrainConfig::tau);
    m["theta1"] = number(&TrainConfig::theta1);
    m["theta2"] = number(&TrainConfig::theta2);
    m["cl_batch"] = number(&TrainConfig::cl_batch);
    m["xi"] = number(&TrainConfig::xi);
    m["walk_paths"] = number(&TrainConfig::walk_paths);
    m["walk_length"] = number(&TrainConfig::walk_length);
    m["restart_prob"] = number(&TrainConfig::restart_prob);
    m["degree_mode"] = {
        [](const TrainConfig& c) {
          return std::string(c.degree_mode == DegreeMode::kAdjacency ? "adjacency" : "blended");
        },
        [](TrainConfig& c, const std::string& v) {
          if (v == "adjacency")
            c.degree_mode = DegreeMode::kAdjacency;
          else if (v == "blended")
            c.degree_mode = DegreeMode::kBlended;
          else
            throw ParameterError("degree_mode must be adjacency or blended");
        }};
    m["q"] = number(&TrainConfig::q);
    m["diffusion_steps"] = number(&TrainConfig::diffusion_steps);
    m["beta_start"] = number(&TrainConfig::beta_start);
    m["beta_end"] = number(&TrainConfig::beta_end);
    m["refresh_period"] = number(&TrainConfig::refresh_period);
    m["denoiser_hidden"] = number(&TrainConfig::denoiser_hidden);
    m["step_dim"] = number(&TrainConfig::step_dim);
    m["denoiser_lr"] = number(&TrainConfig::denoiser_lr);
    m["denoiser_batch"] = number(&TrainConfig::denoiser_batch);
    m["denoiser_weight_decay"] = number(&TrainConfig::denoiser_weight_decay);
    m["denoiser_epochs"] = number(&TrainConfig::denoiser_epochs);
    m["denoiser_mode"] = {
        [](const TrainConfig& c) {
          return std::string(c.denoiser_mode == DenoiserMode::kInterleaved ? "interleaved" : "staged");
        },
        [](TrainConfig& c, const std::string& v) {
          if (v == "interleaved")
            c.denoiser_mode = DenoiserMode::kInterleaved;
          else if (v == "staged")
            c.denoiser_mode = DenoiserMode::kStaged;
          else
            throw ParameterError("denoiser_mode must be interleaved or staged");
        }};
    m["chain_start"] = {
        [](const TrainConfig& c) {
          return std::string(c.chain_start == ChainStart::kPureNoise ? "noise" : "original");
        },
        [](TrainConfig& c, const std::string& v) {
          if (v == "noise")
            c.chain_start = ChainStart::kPureNoise;
          else if (v == "original")
            c.chain_start = ChainStart::kNoisedOriginal;
          else
            throw ParameterError("chain_start must be noise or original");
        }};
    m["chain_noise"] = number(&TrainConfig::chain_noise);
    m["disable_guidance"] = number(&TrainConfig::disable_guidance);
    m["holdout"] = number(&TrainConfig::holdout);
    m["top_n"] = number(&TrainConfig::top_n);
    m["eval_every"] = number(&TrainConfig::eval_every);
    return m;
  }();
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!(lr >= 0.0) || !(denoiser_lr >= 0.0)) throw ParameterError("learning rates must be >= 0");
  if (batch_size == 0 || negatives == 0 || dim == 0 || cl_batch == 0 || denoiser_batch == 0 ||
      denoiser_hidden == 0 || step_dim == 0 || refresh_period == 0 || top_n == 0 || eval_every == 0)
    throw ParameterError("sizes must be >= 1");
  if (!positive(tau)) throw ParameterError("tau must be > 0");
  if (!positive(init_std)) throw ParameterError("init_std must be > 0");
  if (!(theta1 >= 0.0) || !(theta2 >= 0.0)) throw ParameterError("theta1 and theta2 must be >= 0");
  if (!(xi >= 0.0)) throw ParameterError("xi must be >= 0");
  if (q == 0) throw ParameterError("q must be >= 1");
  if (!(denoiser_weight_decay >= 0.0)) throw ParameterError("denoiser_weight_decay must be >= 0");
  walk().validate();
  build_schedule(diffusion_steps, beta_start, beta_end);
}

WalkConfig TrainConfig::walk() const {
  return {walk_paths, walk_length, restart_prob, derive_seed(seed, 0x77616C6BULL)};
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ParameterError("unknown config key '" + key + "'");
  try {
    it->second.set(*this, value);
  } catch (const ParameterError&) {
    throw ParameterError("bad value for " + key + ": '" + value + "'");
  }
}

std::string TrainConfig::get(const std::string& key) const {
  auto it = fields().find(key);
  if (it == fields().end()) throw ParameterError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [name, f] : fields()) out << name << " = " << f.get(*this) << '\n';
  return out.str();
}

TrainConfig TrainConfig::from_text(const std::string& text, const TrainConfig& base) {
  TrainConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", lineno);
    const auto key = trim(body.substr(0, eq));
    const auto value = trim(body.substr(eq + 1));
    if (key.empty()) throw ParseError("missing key", lineno);
    cfg.set(key, value);
  }
  return cfg;
}

TrainConfig TrainConfig::from_text(const std::string& text) { return from_text(text, TrainConfig{}); }

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return TrainConfig::from_text(ss.str(), base);
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write config " + path.string());
  out << cfg.to_text();
}

}  // namespace kdiffe
