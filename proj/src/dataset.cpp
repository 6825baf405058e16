#include "difuse/dataset.hpp"

#include <cmath>
#include <fstream>

#include "difuse/error.hpp"
#include "difuse/image_io.hpp"
#include "json.hpp"

namespace difuse {

namespace {

uint64_t splitmix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Grid {
  torch::Tensor yy, xx;  // [H, W] pixel-centre coordinates
};

Grid make_grid(int64_t size) {
  auto r = torch::arange(size, torch::kFloat32) + 0.5f;
  auto g = torch::meshgrid({r, r}, "ij");
  return {g[0], g[1]};
}

torch::Tensor disk(const Grid& g, double cy, double cx, double radius) {
  return ((g.yy - cy).pow(2) + (g.xx - cx).pow(2) <= radius * radius).to(torch::kFloat32);
}

torch::Tensor box(const Grid& g, double y0, double x0, double side) {
  return ((g.yy >= y0) & (g.yy < y0 + side) & (g.xx >= x0) & (g.xx < x0 + side))
      .to(torch::kFloat32);
}

torch::Tensor stripes(const Grid& g, int period, bool vertical, double lo, double hi) {
  auto coord = vertical ? g.xx : g.yy;
  auto phase = torch::floor(coord / (period / 2.0)).remainder(2.0);
  return lo + (hi - lo) * phase;
}

torch::Tensor smooth_background(const Grid& g, int64_t size, double a, double b, double angle) {
  auto t = (g.xx * std::cos(angle) + g.yy * std::sin(angle)) / static_cast<double>(size);
  t = (t - t.min()) / (t.max() - t.min() + 1e-6);
  return a + (b - a) * t;
}

torch::Tensor paint(const torch::Tensor& base, const torch::Tensor& region, const torch::Tensor& value) {
  return base * (1.0 - region) + value * region;
}

}  // namespace

SceneSample synthetic_scene(int64_t size, uint64_t seed, int64_t index) {
  require(size >= 8, "synthetic scenes need size >= 8");
  std::mt19937_64 rng(splitmix(seed ^ splitmix(static_cast<uint64_t>(index))));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double s = static_cast<double>(size);
  const Grid g = make_grid(size);

  // Visible background: a gentle gradient of a lightly tinted gray.
  const double angle = uni(0.0, 2.0 * M_PI);
  const double g0 = uni(0.25, 0.5), g1 = uni(0.3, 0.6);
  std::array<torch::Tensor, 3> rgb;
  for (int c = 0; c < 3; ++c) {
    const double tint = uni(-0.06, 0.06);
    rgb[static_cast<size_t>(c)] = smooth_background(g, size, g0 + tint, g1 + tint, angle);
  }
  auto x = torch::stack({rgb[0], rgb[1], rgb[2]});

  // Infrared background, independent of the visible one.
  auto y = smooth_background(g, size, uni(0.15, 0.3), uni(0.2, 0.4), uni(0.0, 2.0 * M_PI));

  // Hot object: bright in Y, dim in X. This is the object-of-interest.
  const double hr = uni(0.1, 0.16) * s;
  const double hy = uni(hr, s - hr), hx = uni(hr, s - hr);
  auto hot = disk(g, hy, hx, hr);
  y = paint(y, hot, torch::full_like(y, uni(0.75, 0.95)));
  const double dim = uni(0.15, 0.3);
  x = paint(x, hot.unsqueeze(0), torch::full({3, 1, 1}, dim));

  // Textured square only in Y.
  const double side = uni(0.25, 0.4) * s;
  const double sy = uni(0.0, s - side), sx = uni(0.0, s - side);
  auto sq = box(g, sy, sx, side) * (1.0 - hot);
  const int period = u(rng) < 0.5 ? 4 : 6;
  y = paint(y, sq, stripes(g, period, u(rng) < 0.5, uni(0.05, 0.2), uni(0.65, 0.85)));

  // Saturated color patch and bright disks only in X.
  const double pside = uni(0.2, 0.35) * s;
  const double py = uni(0.0, s - pside), px = uni(0.0, s - pside);
  auto patch = box(g, py, px, pside) * (1.0 - hot);
  const int dominant = static_cast<int>(u(rng) * 3.0) % 3;
  std::vector<double> pc{uni(0.15, 0.35), uni(0.15, 0.35), uni(0.15, 0.35)};
  pc[static_cast<size_t>(dominant)] = uni(0.65, 0.9);
  x = paint(x, patch.unsqueeze(0), torch::tensor(pc, torch::kFloat32).view({3, 1, 1}));

  const int n_disks = 1 + static_cast<int>(u(rng) * 2.0);
  for (int k = 0; k < n_disks; ++k) {
    const double r = uni(0.08, 0.16) * s;
    auto d = disk(g, uni(r, s - r), uni(r, s - r), r) * (1.0 - hot);
    const double level = uni(0.8, 0.95);
    auto color = torch::tensor({level, level - uni(0.0, 0.08), level - uni(0.0, 0.08)},
                               torch::kFloat32)
                     .view({3, 1, 1});
    x = paint(x, d.unsqueeze(0), color);
  }

  SceneSample out;
  out.pair = {"syn" + std::to_string(index), Image(x.clamp(0.0, 1.0)),
              Image(y.clamp(0.0, 1.0).unsqueeze(0))};
  out.object_mask = hot;
  return out;
}

DisjointPair disjoint_pair(int64_t size, uint64_t seed) {
  require(size >= 16, "disjoint pairs need size >= 16");
  std::mt19937_64 rng(splitmix(seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double s = static_cast<double>(size);
  const Grid g = make_grid(size);

  const double bg = uni(0.3, 0.4);
  // Disk in one half, square in the other, so the two never overlap.
  const bool disk_left = u(rng) < 0.5;
  const double r = uni(0.14, 0.2) * s;
  const double half = s / 2.0;
  const double dcx = disk_left ? uni(r, half - r) : uni(half + r, s - r);
  auto dmask = disk(g, uni(r, s - r), dcx, r);
  const double side = uni(0.3, 0.4) * s;
  const double sx = disk_left ? uni(half, s - side) : uni(0.0, half - side);
  auto smask = box(g, uni(0.0, s - side), sx, side);

  auto xb = paint(torch::full({size, size}, bg), dmask, torch::full({size, size}, uni(0.85, 0.95)));
  const int period = u(rng) < 0.5 ? 4 : 6;
  auto tex = stripes(g, period, u(rng) < 0.5, uni(0.05, 0.15), uni(0.75, 0.85));
  auto y = paint(torch::full({size, size}, bg), smask, tex);

  DisjointPair out;
  out.pair = {"disjoint" + std::to_string(seed), Image(xb.unsqueeze(0).expand({3, size, size})),
              Image(y.unsqueeze(0))};
  out.disk_mask = dmask;
  out.square_mask = smask;
  return out;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw NotFoundError("manifest not found: " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  std::vector<ManifestRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.x_path = resolve(j.at("x_path").get<std::string>());
      r.y_path = resolve(j.at("y_path").get<std::string>());
      if (j.contains("mask_path") && !j.at("mask_path").is_null()) {
        r.mask_path = resolve(j.at("mask_path").get<std::string>());
      }
      r.split = j.value("split", std::string("train"));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write manifest: " + path.string());
  for (const auto& r : records) {
    nlohmann::json j{{"x_path", r.x_path.string()}, {"y_path", r.y_path.string()},
                     {"split", r.split}};
    if (r.mask_path) j["mask_path"] = r.mask_path->string();
    f << j.dump() << "\n";
  }
}

std::string to_string(ComponentKind k) {
  return k == ComponentKind::kBrightness ? "brightness" : "chroma";
}

ComponentKind parse_component(const std::string& name) {
  if (name == "brightness") return ComponentKind::kBrightness;
  if (name == "chroma") return ComponentKind::kChroma;
  throw ValidationError("unknown component '" + name + "' (brightness|chroma)");
}

int64_t latent_channels(ComponentKind k) { return k == ComponentKind::kBrightness ? 1 : 2; }

DegradationSpec draw_training_degradation(const DegradationSection& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < cfg.identity_fraction) return DegradationSpec::identity();
  std::uniform_int_distribution<size_t> pick(0, cfg.train_mix.size() - 1);
  return sample_spec(cfg.train_mix[pick(rng)], rng, cfg.ranges);
}

ComponentDataset build_component_dataset(const std::vector<ModalPair>& clean, ComponentKind kind,
                                         const DegradationSection& cfg, uint64_t seed) {
  require(!clean.empty(), "cannot build a dataset from zero pairs");
  std::mt19937_64 rng(splitmix(seed));
  ComponentDataset ds;
  ds.kind = kind;
  for (const auto& p : clean) {
    if (kind == ComponentKind::kChroma) {
      require(p.x.is_color(), "chroma datasets need color X images");
      const auto deg = apply(p.x, draw_training_degradation(cfg, rng));
      ds.samples.push_back({split(p.x).second.values, split(deg).second.values});
    } else {
      const auto dx = apply(p.x, draw_training_degradation(cfg, rng));
      const auto dy = apply(p.y, draw_training_degradation(cfg, rng));
      ds.samples.push_back({brightness_of(p.x).values, brightness_of(dx).values});
      ds.samples.push_back({brightness_of(p.y).values, brightness_of(dy).values});
    }
  }
  return ds;
}

std::vector<FusionSample> build_fusion_dataset(const std::vector<ModalPair>& clean,
                                               const std::vector<torch::Tensor>& masks,
                                               const DegradationSection& cfg, uint64_t seed) {
  require(!clean.empty(), "cannot build a dataset from zero pairs");
  require(masks.empty() || masks.size() == clean.size(), "one mask per pair");
  std::mt19937_64 rng(splitmix(seed ^ 0xF05Eull));
  std::vector<FusionSample> out;
  for (size_t i = 0; i < clean.size(); ++i) {
    const auto& p = clean[i];
    const auto dx = apply(p.x, draw_training_degradation(cfg, rng));
    const auto dy = apply(p.y, draw_training_degradation(cfg, rng));
    FusionSample s{brightness_of(p.x).values, brightness_of(p.y).values,
                   brightness_of(dx).values, brightness_of(dy).values, {}};
    if (!masks.empty() && masks[i].defined()) s.mask = masks[i].to(torch::kFloat32).unsqueeze(0);
    out.push_back(std::move(s));
  }
  return out;
}

LoadedSplit load_split(const std::vector<ManifestRecord>& records, const std::string& split_name) {
  LoadedSplit out;
  for (const auto& r : records) {
    if (r.split != split_name) continue;
    ModalPair p{r.x_path.stem().string(), read_image(r.x_path), read_image(r.y_path)};
    require(p.x.height() == p.y.height() && p.x.width() == p.y.width(),
            "unregistered pair: " + p.id);
    torch::Tensor mask;
    if (r.mask_path) {
      const auto m = read_image(*r.mask_path);
      require(m.channels() == 1 && m.height() == p.x.height() && m.width() == p.x.width(),
              "mask does not match its pair: " + r.mask_path->string());
      mask = (m.values()[0] >= 0.5).to(torch::kFloat32);
    }
    out.pairs.push_back(std::move(p));
    out.masks.push_back(mask);
  }
  return out;
}

LoadedSplit synthetic_split(int64_t count, int64_t size, uint64_t seed, int64_t first_index) {
  LoadedSplit out;
  for (int64_t i = 0; i < count; ++i) {
    auto s = synthetic_scene(size, seed, first_index + i);
    out.pairs.push_back(std::move(s.pair));
    out.masks.push_back(s.object_mask);
  }
  return out;
}

}  // namespace difuse
