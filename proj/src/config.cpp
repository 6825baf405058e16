#include "difuse/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "difuse/error.hpp"

namespace difuse {

namespace {

using Json = nlohmann::json;

struct RangeRef {
  double& lo;
  double& hi;
};

/// Parse-side visitor: assigns a field when the file provides it.
class Reader {
 public:
  explicit Reader(std::map<std::string, std::map<std::string, Json>>& values) : values_(values) {}

  template <typename T>
  void operator()(const std::string& section, const std::string& key, T& field) {
    auto s = values_.find(section);
    if (s == values_.end()) return;
    auto k = s->second.find(key);
    if (k == s->second.end()) return;
    try {
      assign(k->second, field);
    } catch (const Json::exception&) {
      throw ValidationError("config: bad value for [" + section + "] " + key);
    }
    s->second.erase(k);
  }

 private:
  static void assign(const Json& j, int64_t& f) { f = j.get<int64_t>(); }
  static void assign(const Json& j, uint64_t& f) { f = j.get<uint64_t>(); }
  static void assign(const Json& j, double& f) { f = j.get<double>(); }
  static void assign(const Json& j, bool& f) { f = j.get<bool>(); }
  static void assign(const Json& j, std::string& f) { f = j.get<std::string>(); }
  static void assign(const Json& j, RangeRef& f) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 2) throw ValidationError("config: ranges take exactly two values");
    f.lo = v[0];
    f.hi = v[1];
  }
  static void assign(const Json& j, std::vector<Severity>& f) {
    f.clear();
    for (const auto& s : j.get<std::vector<std::string>>()) f.push_back(parse_severity(s));
  }

  std::map<std::string, std::map<std::string, Json>>& values_;
};

/// Print-side visitor: emits `key = value` grouped by section.
class Writer {
 public:
  template <typename T>
  void operator()(const std::string& section, const std::string& key, T& field) {
    if (section != current_) {
      if (!current_.empty()) out_ << "\n";
      out_ << "[" << section << "]\n";
      current_ = section;
    }
    out_ << key << " = " << render(field) << "\n";
  }

  std::string str() const { return out_.str(); }

 private:
  static std::string render(int64_t v) { return std::to_string(v); }
  static std::string render(uint64_t v) { return std::to_string(v); }
  static std::string render(double v) { return Json(v).dump(); }
  static std::string render(bool v) { return v ? "true" : "false"; }
  static std::string render(const std::string& v) { return Json(v).dump(); }
  static std::string render(const RangeRef& r) {
    return "[" + Json(r.lo).dump() + ", " + Json(r.hi).dump() + "]";
  }
  static std::string render(const std::vector<Severity>& v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ", \"" : "\"") + to_string(v[i]) + "\"";
    return s + "]";
  }

  std::ostringstream out_;
  std::string current_;
};

template <typename V>
void visit_fields(Config& c, V& v) {
  auto& d = c.diffusion;
  v("diffusion", "T", d.T);
  v("diffusion", "beta_start", d.beta_start);
  v("diffusion", "beta_end", d.beta_end);
  v("diffusion", "schedule_kind", d.schedule_kind);
  v("diffusion", "base_width", d.base_width);
  v("diffusion", "depth", d.depth);
  v("diffusion", "time_embed_dim", d.time_embed_dim);
  v("diffusion", "prediction", d.prediction);
  v("diffusion", "learning_rate", d.train.learning_rate);
  v("diffusion", "lambda_vlb", d.train.lambda_vlb);
  v("diffusion", "batch_size", d.train.batch_size);
  v("diffusion", "steps", d.train.steps);
  v("diffusion", "ema_decay", d.train.ema_decay);
  v("diffusion", "random_flip", d.train.random_flip);
  v("diffusion", "random_crop", d.train.random_crop);
  v("diffusion", "crop_size", d.train.crop_size);
  v("diffusion", "checkpoint_every", d.train.checkpoint_every);
  v("diffusion", "seed", d.train.seed);

  auto& f = c.fcm;
  v("fcm", "reduction", f.reduction);
  v("fcm", "gamma_int", f.train.gamma_int);
  v("fcm", "gamma_grad", f.train.gamma_grad);
  v("fcm", "learning_rate", f.train.learning_rate);
  v("fcm", "batch_size", f.train.batch_size);
  v("fcm", "steps", f.train.steps);
  v("fcm", "random_flip", f.train.random_flip);
  v("fcm", "random_crop", f.train.random_crop);
  v("fcm", "crop_size", f.train.crop_size);
  v("fcm", "x0_clamp_min", f.train.x0_clamp_min);
  v("fcm", "x0_clamp_max", f.train.x0_clamp_max);
  v("fcm", "checkpoint_every", f.train.checkpoint_every);
  v("fcm", "seed", f.train.seed);

  auto& r = c.remod;
  v("remod", "hidden", r.hidden);
  v("remod", "learning_rate", r.train.learning_rate);
  v("remod", "range_penalty", r.train.range_penalty);
  v("remod", "batch_size", r.train.batch_size);
  v("remod", "steps", r.train.steps);
  v("remod", "x0_clamp_min", r.train.x0_clamp_min);
  v("remod", "x0_clamp_max", r.train.x0_clamp_max);
  v("remod", "checkpoint_every", r.train.checkpoint_every);
  v("remod", "seed", r.train.seed);

  auto& g = c.degradation;
  for (auto s : {Severity::kLight, Severity::kMedium, Severity::kHeavy}) {
    auto& rr = g.ranges.at(s);
    const auto name = to_string(s);
    RangeRef gain{rr.gain_lo, rr.gain_hi};
    RangeRef gamma{rr.gamma_lo, rr.gamma_hi};
    RangeRef sigma{rr.sigma_lo, rr.sigma_hi};
    v("degradation", name + "_gain", gain);
    v("degradation", name + "_gamma", gamma);
    v("degradation", name + "_sigma", sigma);
  }
  v("degradation", "train_mix", g.train_mix);
  v("degradation", "identity_fraction", g.identity_fraction);

  auto& io = c.io;
  v("io", "image_size", io.image_size);
  v("io", "workers", io.workers);
  v("io", "locator_timeout_s", io.locator_timeout_s);
  v("io", "vif_noise_variance", io.vif_noise_variance);
  v("io", "vif_scales", io.vif_scales);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainingConfig::validate() const {
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(gamma_int >= 0.0 && gamma_grad >= 0.0, "gamma_int and gamma_grad must be >= 0");
  require(lambda_vlb >= 0.0, "lambda_vlb must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(steps >= 0, "steps must be >= 0");
  require(crop_size >= 0, "crop_size must be >= 0");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(x0_clamp_min < x0_clamp_max, "x0 clamp band is empty");
  require(range_penalty >= 0.0, "range_penalty must be >= 0");
  require(ema_decay >= 0.0 && ema_decay < 1.0, "ema_decay must be in [0, 1)");
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"lambda_vlb", c.lambda_vlb},
          {"gamma_int", c.gamma_int},         {"gamma_grad", c.gamma_grad},
          {"batch_size", c.batch_size},       {"steps", c.steps},
          {"random_flip", c.random_flip},     {"random_crop", c.random_crop},
          {"crop_size", c.crop_size},         {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"x0_clamp_min", c.x0_clamp_min},   {"x0_clamp_max", c.x0_clamp_max},
          {"range_penalty", c.range_penalty}, {"ema_decay", c.ema_decay}};
}

NoiseSchedule DiffusionSection::schedule() const {
  require(schedule_kind == "linear", "only the linear schedule is supported");
  return NoiseSchedule::linear(T, beta_start, beta_end);
}

DenoiserSpec DiffusionSection::spec(int64_t latent_channels) const {
  DenoiserSpec s;
  s.latent_channels = latent_channels;
  s.base_width = base_width;
  s.depth = depth;
  s.time_embed_dim = time_embed_dim;
  s.prediction = prediction;
  s.validate();
  return s;
}

Config Config::parse(const std::string& text) {
  std::map<std::string, std::map<std::string, Json>> values;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    const auto where = " (line " + std::to_string(line_no) + ")";
    if (line.front() == '[') {
      require(line.back() == ']', "config: unterminated section header" + where);
      section = trim(line.substr(1, line.size() - 2));
      values[section];
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, "config: expected key = value" + where);
    require(!section.empty(), "config: key outside of a section" + where);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      values[section][key] = Json::parse(value);
    } catch (const Json::exception&) {
      throw ValidationError("config: cannot parse value of '" + key + "'" + where);
    }
  }

  Config c;
  Reader reader(values);
  visit_fields(c, reader);
  for (const auto& [sec, keys] : values) {
    static const std::vector<std::string> known{"diffusion", "fcm", "remod", "degradation", "io"};
    require(std::find(known.begin(), known.end(), sec) != known.end(),
            "config: unknown section [" + sec + "]");
    if (!keys.empty()) {
      throw ValidationError("config: unknown key '" + keys.begin()->first + "' in [" + sec + "]");
    }
  }
  c.diffusion.schedule();
  c.diffusion.spec(1);
  c.diffusion.train.validate();
  c.fcm.train.validate();
  c.remod.train.validate();
  require(c.degradation.identity_fraction >= 0.0 && c.degradation.identity_fraction <= 1.0,
          "identity_fraction must lie in [0, 1]");
  require(!c.degradation.train_mix.empty(), "train_mix must not be empty");
  require(c.fcm.reduction >= 1, "reduction must be >= 1");
  require(c.remod.hidden >= 1, "hidden must be >= 1");
  require(c.io.workers >= 1, "workers must be >= 1");
  require(c.io.image_size >= 4, "image_size must be >= 4");
  require(c.io.locator_timeout_s > 0.0, "locator_timeout_s must be > 0");
  require(c.io.vif_noise_variance > 0.0, "vif_noise_variance must be > 0");
  require(c.io.vif_scales >= 1, "vif_scales must be >= 1");
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw NotFoundError("config not found: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string Config::to_text() const {
  Config copy = *this;
  Writer writer;
  visit_fields(copy, writer);
  return writer.str();
}

}  // namespace difuse
