// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "difuse/colorspace.hpp"
#include "difuse/dataset.hpp"
#include "difuse/degrade.hpp"
#include "difuse/image_io.hpp"
#include "difuse/locate.hpp"
#include "difuse/losses.hpp"
#include "difuse/metrics.hpp"
#include "difuse/sampler.hpp"
#include "oracles.hpp"

using namespace difuse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

/// Accumulates named checks for one criterion.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failed_.push_back(what);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool pass() const { return pass_; }
  std::string summary() const {
    std::ostringstream os;
    for (size_t i = 0; i < notes_.size(); ++i) os << (i ? "; " : "") << notes_[i];
    if (!failed_.empty()) {
      os << " | failed:";
      for (const auto& f : failed_) os << " [" << f << "]";
    }
    return os.str();
  }

 private:
  bool pass_ = true;
  std::vector<std::string> notes_, failed_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::mt19937_64 rng(std::random_device{}());
    path_ = fs::temp_directory_path() / ("difuse_accept_" + tag + "_" + std::to_string(rng()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& s) const { return path_ / s; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// ------------------------------------------------------------------ desk setup

constexpr int64_t kSize = 32;
constexpr int64_t kHeldOut = 32;
constexpr uint64_t kTrainSeed = 11;
constexpr uint64_t kHeldOutSeed = 999;

DiffusionSection desk_diffusion() {
  DiffusionSection d;
  d.T = 50;
  d.beta_start = 0.01;
  d.beta_end = 0.3;
  d.base_width = 16;
  d.depth = 2;
  d.time_embed_dim = 64;
  d.prediction = "x0";
  d.train.learning_rate = 5e-4;
  d.train.batch_size = 16;
  d.train.steps = 5000;
  d.train.seed = 1;
  return d;
}

TrainingConfig desk_fcm_config() {
  TrainingConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 8;
  c.steps = 600;
  c.seed = 2;
  return c;
}

TrainingConfig desk_remod_config() {
  TrainingConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 8;
  c.steps = 200;
  c.seed = 3;
  return c;
}

struct Desk {
  std::optional<DiffusionModel> brightness, chroma;
  FusionControl fcm{nullptr};
  RemodBlock remod{nullptr};
  std::vector<FusionSample> fusion_train;
  double diffusion_train_seconds = 0;
};

const LoadedSplit& train_split() {
  static const LoadedSplit s = synthetic_split(128, kSize, kTrainSeed);
  return s;
}

const LoadedSplit& heldout_split() {
  static const LoadedSplit s = synthetic_split(kHeldOut, kSize, kHeldOutSeed);
  return s;
}

DiffusionModel train_component(ComponentKind kind, const std::optional<fs::path>& cache) {
  const auto name = kind == ComponentKind::kBrightness ? kBrightnessCkpt : kChromaCkpt;
  if (cache && fs::exists(*cache / name)) return diffusion_from_checkpoint(Checkpoint::load(*cache / name));
  const auto d = desk_diffusion();
  DegradationSection deg;
  const auto ds = build_component_dataset(train_split().pairs, kind, deg, 3);
  auto r = train_restoration_diffusion(ds, d.schedule(), d.spec(latent_channels(kind)), d.train);
  std::cout << "  trained " << to_string(kind) << ": held-out hybrid loss " << fmt(r.heldout_before)
            << " -> " << fmt(r.heldout_after) << "\n";
  if (cache) {
    fs::create_directories(*cache);
    r.checkpoint.save(*cache / name);
  }
  return diffusion_from_checkpoint(r.checkpoint);
}

// ------------------------------------------------------------------ criteria

Verdict schedule_algebra() {
  Verdict v;
  const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  torch::manual_seed(101);
  auto x0 = torch::rand({4, 1, 8, 8}, kF64) + 0.05;
  auto eps = torch::randn({4, 1, 8, 8}, kF64);
  double worst = 0;
  bool endpoints = true;
  for (int64_t t = 0; t < 1000; ++t) {
    auto rec = predict_x0(q_sample(x0, t, eps, s), eps, t, s);
    worst = std::max(worst, ((rec - x0).abs() / x0.abs()).max().item<double>());
    auto ones = torch::ones({3}, kF64);
    endpoints = endpoints && (posterior_variance(ones, t, s) == s.beta(t)).all().item<bool>() &&
                (posterior_variance(ones * 0, t, s) == s.beta_tilde(t)).all().item<bool>();
  }
  v.check(worst <= 1e-5, "predict_x0 inversion <= 1e-5 relative");
  v.check(endpoints, "variance endpoints exact");
  v.note("max inversion error " + fmt(worst, 3));

  const auto tiny = NoiseSchedule::linear(4, 0.1, 0.4);
  const double hand = (1.0 / std::sqrt(0.8)) * (1.0 - 0.2 / std::sqrt(0.28));
  const double got =
      posterior_mean(torch::full({1}, 1.0, kF64), torch::full({1}, 1.0, kF64), 1, tiny).item<double>();
  v.check(std::abs(got - hand) <= 1e-6, "posterior mean scalar example");
  v.note("posterior mean " + fmt(got, 10) + " vs hand " + fmt(hand, 10));
  return v;
}

Verdict loss_suite() {
  Verdict v;
  const TrainingConfig defaults;
  v.check(defaults.gamma_int == 1.0 && defaults.gamma_grad == 0.2, "default weights 1 and 0.2");
  auto xb = torch::full({4, 4}, 0.2, kF64), y = torch::full({4, 4}, 0.8, kF64);
  const double example =
      fcm_loss(torch::full({4, 4}, 0.5, kF64), xb, y, defaults.gamma_int, defaults.gamma_grad)
          .item<double>();
  v.check(std::abs(example - 0.3) <= 1e-9, "constant-plane example equals 0.3");
  v.note("worked example " + fmt(example, 12));

  torch::manual_seed(102);
  DenoiserSpec spec;
  spec.latent_channels = 1;
  spec.base_width = 4;
  spec.depth = 2;
  spec.time_embed_dim = 8;
  spec.prediction = "x0";
  Denoiser net(spec);
  net->to(torch::kFloat64);
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  FusionControl fcm(spec.scale_channels(), 2);
  fcm->to(torch::kFloat64);
  auto z = torch::randn({2, 1, 4, 4}, kF64);
  auto cx = torch::rand({2, 1, 4, 4}, kF64), cy = torch::rand({2, 1, 4, 4}, kF64);
  auto t = torch::tensor({1, 3}, torch::kInt64);
  auto bundles = encode(net, z, {cx, cy}, t);
  auto loss_fn = [&] {
    auto w = fcm_weights(fcm, bundles[0], bundles[1]);
    auto head = decode(net, fuse_features(bundles[0], bundles[1], w), t).first;
    return fcm_loss(head, cx, cy, defaults.gamma_int, defaults.gamma_grad);
  };
  double worst = 0;
  uint64_t seed = 0;
  for (auto& p : fcm->parameters()) worst = std::max(worst, testing::fd_relative_error(loss_fn, p, 3, seed++, 1e-4));
  v.check(worst <= 1e-3, "finite-difference gradients within 1e-3 relative");
  v.note("worst gradient error " + fmt(worst, 3) + " over " + std::to_string(seed) + " tensors");
  return v;
}

Verdict restoration(Desk& desk, const std::optional<fs::path>& cache) {
  Verdict v;
  const auto t0 = Clock::now();
  desk.brightness = train_component(ComponentKind::kBrightness, cache);
  desk.chroma = train_component(ComponentKind::kChroma, cache);
  desk.diffusion_train_seconds = seconds_since(t0);

  std::mt19937_64 rng(5);
  std::vector<torch::Tensor> cb, db, cc, dc;
  for (const auto& p : heldout_split().pairs) {
    const auto spec = sample_spec(Severity::kMedium, rng);
    auto [b0, c0] = split(p.x);
    auto [b1, c1] = split(apply(p.x, spec));
    cb.push_back(b0.values);
    db.push_back(b1.values);
    cc.push_back(c0.values);
    dc.push_back(c1.values);
  }
  auto clean_b = torch::stack(cb), deg_b = torch::stack(db);
  auto clean_c = torch::stack(cc), deg_c = torch::stack(dc);
  auto rest_b = restore(*desk.brightness, deg_b, 7);
  auto rest_c = restore(*desk.chroma, deg_c, 8);

  auto wins = [](const torch::Tensor& clean, const torch::Tensor& deg, const torch::Tensor& rest) {
    auto er = (rest - clean).abs().mean({1, 2, 3});
    auto ed = (deg - clean).abs().mean({1, 2, 3});
    return std::make_tuple((er < ed).sum().item<int64_t>(), er.mean().item<double>(),
                           ed.mean().item<double>());
  };
  const auto [wb, rb, eb] = wins(clean_b, deg_b, rest_b);
  const auto [wc, rc, ec] = wins(clean_c, deg_c, rest_c);

  int64_t wrgb = 0;
  for (int64_t i = 0; i < kHeldOut; ++i) {
    auto restored = merge({rest_b[i]}, {rest_c[i]}).values();
    auto degraded = merge({deg_b[i]}, {deg_c[i]}).values();
    auto clean = heldout_split().pairs[static_cast<size_t>(i)].x.values();
    wrgb += (restored - clean).abs().mean().item<double>() < (degraded - clean).abs().mean().item<double>();
  }
  const int64_t need = static_cast<int64_t>(std::ceil(0.8 * kHeldOut));
  const double elapsed = seconds_since(t0);
  v.check(wb >= need, "brightness wins >= 80%");
  v.check(wc >= need, "chroma wins >= 80%");
  v.check(elapsed <= 30 * 60, "runtime <= 30 min");
  v.note("brightness " + std::to_string(wb) + "/" + std::to_string(kHeldOut) + " (MAE " + fmt(rb) +
         " vs degraded " + fmt(eb) + ")");
  v.note("chroma " + std::to_string(wc) + "/" + std::to_string(kHeldOut) + " (MAE " + fmt(rc) +
         " vs degraded " + fmt(ec) + ")");
  v.note("merged color " + std::to_string(wrgb) + "/" + std::to_string(kHeldOut));
  v.note("train " + fmt(desk.diffusion_train_seconds, 4) + " s, total " + fmt(elapsed, 4) + " s");
  return v;
}

Verdict fcm_ablation(Desk& desk, const std::optional<fs::path>& cache) {
  Verdict v;
  const auto t0 = Clock::now();
  DegradationSection deg;
  desk.fusion_train = build_fusion_dataset(train_split().pairs, train_split().masks, deg, 4);
  const auto cfg = desk_fcm_config();
  if (cache && fs::exists(*cache / kFcmCkpt)) {
    desk.fcm = fcm_from_checkpoint(Checkpoint::load(*cache / kFcmCkpt));
  } else {
    auto r = train_fcm(*desk.brightness, desk.fusion_train, 2, cfg);
    desk.fcm = fcm_from_checkpoint(r.checkpoint);
    if (cache) r.checkpoint.save(*cache / kFcmCkpt);
  }
  FusionMode learned;
  learned.fcm = &desk.fcm;
  const double ours = evaluate_fcm_loss(*desk.brightness, desk.fusion_train, learned, cfg, 16, 77);
  v.note("trained FCM " + fmt(ours, 5));
  for (auto rule : {FixedRule::kMax, FixedRule::kAdd, FixedRule::kMean, FixedRule::kVariance}) {
    FusionMode fixed;
    fixed.rule = rule;
    const double l = evaluate_fcm_loss(*desk.brightness, desk.fusion_train, fixed, cfg, 16, 77);
    v.note(to_string(rule) + " " + fmt(l, 5));
    v.check(ours <= l, "FCM <= " + to_string(rule));
  }
  const double elapsed = seconds_since(t0);
  v.check(elapsed <= 15 * 60, "runtime <= 15 min");
  v.note(fmt(elapsed, 4) + " s");
  return v;
}

Verdict complementarity(Desk& desk) {
  Verdict v;
  const auto t0 = Clock::now();
  double disk_sum = 0, edge_sum = 0, disk_min = 1e9, edge_min = 1e9;
  const int n = 8;
  for (int i = 0; i < n; ++i) {
    auto d = disjoint_pair(kSize, 500 + i);
    auto xb = brightness_of(d.pair.x).values;
    auto y = d.pair.y.values();
    auto fused = diffuse_fuse(*desk.brightness, desk.fcm, xb.unsqueeze(0), y.unsqueeze(0), 40 + i)[0];
    const double disk = metrics::region_mean(fused, d.disk_mask) / metrics::region_mean(xb, d.disk_mask);
    const double edge =
        metrics::sobel_energy(fused, d.square_mask) / metrics::sobel_energy(y, d.square_mask);
    disk_sum += disk;
    edge_sum += edge;
    disk_min = std::min(disk_min, disk);
    edge_min = std::min(edge_min, edge);
  }
  const double disk = disk_sum / n, edge = edge_sum / n;
  const double elapsed = seconds_since(t0);
  v.check(disk >= 0.9, "disk intensity retained >= 0.9");
  v.check(edge >= 0.7, "square Sobel energy retained >= 0.7");
  v.check(elapsed <= 10 * 60, "runtime <= 10 min");
  v.note("disk ratio mean " + fmt(disk) + " (min " + fmt(disk_min) + ")");
  v.note("edge ratio mean " + fmt(edge) + " (min " + fmt(edge_min) + ") over " + std::to_string(n) +
         " pairs");
  v.note(fmt(elapsed, 4) + " s");
  return v;
}

Verdict remod_exactness(Desk& desk, const std::optional<fs::path>& cache) {
  Verdict v;
  if (cache && fs::exists(*cache / kRemodCkpt)) {
    desk.remod = remod_from_checkpoint(Checkpoint::load(*cache / kRemodCkpt));
  } else {
    auto r = train_remod_block(*desk.brightness, desk.fcm, desk.fusion_train, 8, desk_remod_config());
    desk.remod = remod_from_checkpoint(r.checkpoint);
    if (cache) r.checkpoint.save(*cache / kRemodCkpt);
  }
  const auto t0 = Clock::now();
  auto& m = *desk.brightness;
  const auto& held = heldout_split();
  auto xb = torch::stack({brightness_of(held.pairs[0].x).values, brightness_of(held.pairs[1].x).values});
  auto y = torch::stack({held.pairs[0].y.values(), held.pairs[1].y.values()});
  auto mask = torch::stack({held.masks[0], held.masks[1]}).unsqueeze(1);

  // Feature level: unit coefficients reproduce the plain weighted sum.
  {
    torch::NoGradGuard g;
    auto t = torch::tensor({10, 30}, torch::kInt64);
    auto bundles = encode(m.net, torch::randn({2, 1, kSize, kSize}), {xb, y}, t);
    auto w = fcm_weights(desk.fcm, bundles[0], bundles[1]);
    ModulationCoeffs ones;
    for (const auto& s : bundles[0].scales) {
      ones.x.push_back(torch::ones({s.size(0), 1, s.size(2), s.size(3)}));
      ones.y.push_back(ones.x.back());
    }
    auto a = apply_remod(bundles[0], bundles[1], w, ones);
    auto b = fuse_features(bundles[0], bundles[1], w);
    bool same = true;
    for (size_t s = 0; s < a.size(); ++s) same = same && bit_equal(a.scales[s], b.scales[s]);
    v.check(same, "unit coefficients reproduce the weighted sum");
  }

  auto plain = diffuse_fuse(m, desk.fcm, xb, y, 61);
  RemodBlock closed(m.net->spec().scale_channels(), 8);
  FuseOptions identity;
  identity.remod = closed;
  identity.mask = mask;
  v.check(bit_equal(diffuse_fuse(m, desk.fcm, xb, y, 61, identity), plain), "closed gates reproduce the base run");

  FuseOptions empty;
  empty.remod = desk.remod;
  empty.mask = torch::zeros_like(mask);
  v.check(bit_equal(diffuse_fuse(m, desk.fcm, xb, y, 61, empty), plain), "empty mask reproduces no-text run");
  FusionModels models{m, desk.chroma, desk.fcm, desk.remod};
  FusionRun run{held.pairs[2], 5, 6, std::nullopt};
  NullLocator null;
  v.check(bit_equal(fuse_full(models, run, "the person", null).values(), fuse_full(models, run).values()),
          "null locator reproduces no-text fusion");

  FuseOptions text;
  text.remod = desk.remod;
  text.mask = mask;
  auto mod = diffuse_fuse(m, desk.fcm, xb, y, 61, text);
  auto off = mask == 0;
  v.check(torch::equal(mod.masked_select(off), plain.masked_select(off)), "off-mask pixels equal the base fusion");
  v.note("in-mask mean change " + fmt((mod - plain).abs().masked_select(~off).mean().item<double>(), 3));

  int64_t better = 0;
  const int64_t n = static_cast<int64_t>(held.pairs.size());
  for (int64_t i = 0; i < n; ++i) {
    auto xi = brightness_of(held.pairs[i].x).values.unsqueeze(0);
    auto yi = held.pairs[i].y.values().unsqueeze(0);
    auto mi = held.masks[i].view({1, 1, kSize, kSize});
    FuseOptions o;
    o.remod = desk.remod;
    o.mask = mi;
    auto base = diffuse_fuse(m, desk.fcm, xi, yi, 70 + i);
    auto modi = diffuse_fuse(m, desk.fcm, xi, yi, 70 + i, o);
    better += masked_contrast(modi, modi, mi).item<double>() >= masked_contrast(base, base, mi).item<double>();
  }
  v.note("masked contrast not below the base fusion on " + std::to_string(better) + "/" + std::to_string(n) +
         " held-out scenes (informational)");
  const double elapsed = seconds_since(t0);
  v.check(elapsed <= 120, "runtime < 2 min");
  v.note(fmt(elapsed, 4) + " s");
  return v;
}

Verdict metric_oracles() {
  Verdict v;
  using metrics::Plane;
  const auto t0 = Clock::now();
  auto constant = [](double c) { return Plane{8, 8, std::vector<double>(64, c)}; };
  Plane half{2, 2, {0, 0, 255, 255}};
  v.check(metrics::en(constant(90)) == 0.0, "EN constant");
  v.check(std::abs(metrics::en(half) - 1.0) <= 1e-12, "EN two bins");
  v.check(metrics::ag(constant(90)) == 0.0, "AG constant");
  v.check(metrics::sd(constant(90)) == 0.0, "SD constant");
  v.check(metrics::sd(half) == 127.5, "SD two-point");

  Plane ramp{16, 16, {}};
  for (int i = 0; i < 256; ++i) ramp.values.push_back(i);
  v.check(std::abs(metrics::en(ramp) - testing::en_oracle(ramp)) <= 1e-12 &&
              std::abs(metrics::en(ramp) - 8.0) <= 1e-12,
          "EN ramp");
  Plane hramp{8, 8, {}};
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) hramp.values.push_back(j);
  }
  v.check(std::abs(metrics::ag(hramp) - std::sqrt(0.5)) <= 1e-12, "AG ramp");

  std::mt19937_64 rng(103);
  double sd_err = 0, scd_err = 0, vif_err = 0;
  for (int k = 0; k < 20; ++k) {
    auto p = testing::random_plane(rng, 8, 8);
    sd_err = std::max(sd_err, std::abs(metrics::sd(p) - testing::sd_oracle(p)));
    auto x = testing::random_plane(rng, 8, 8), y = testing::random_plane(rng, 8, 8);
    std::vector<double> fy, fx;
    for (size_t i = 0; i < 64; ++i) {
      fy.push_back(p.values[i] - y.values[i]);
      fx.push_back(p.values[i] - x.values[i]);
    }
    const double oracle = testing::pearson_oracle(fy, x.values) + testing::pearson_oracle(fx, y.values);
    scd_err = std::max(scd_err, std::abs(metrics::scd(p, x, y) - oracle));
  }
  v.check(sd_err <= 1e-9, "SD two-pass oracle");
  v.check(scd_err <= 1e-9, "SCD Pearson oracle");

  auto x = testing::random_plane(rng, 32, 32);
  const double self = metrics::vif(x, x, x);
  v.check(std::abs(self - 1.0) <= 1e-6, "VIF of identical images");
  v.check(std::abs(testing::VifOracle::run(x, x, 2.0, 4) - 1.0) <= 1e-6, "oracle VIF of identical images");
  for (int k = 0; k < 3; ++k) {
    auto r = testing::random_plane(rng, 36, 40);
    auto f = r;
    std::normal_distribution<double> noise(0, 15);
    for (auto& val : f.values) val = std::clamp(0.8 * val + noise(rng), 0.0, 255.0);
    vif_err = std::max(vif_err, std::abs(metrics::vif_single(r, f) - testing::VifOracle::run(r, f, 2.0, 4)));
  }
  v.check(vif_err <= 1e-9, "VIF against the 2D oracle");
  auto y = testing::random_plane(rng, 32, 32);
  Plane flat{32, 32, std::vector<double>(1024, 128.0)};
  v.check(metrics::vif(flat, x, y) < 0.1, "VIF of a constant fusion");

  TempDir dir("metrics");
  for (auto sub : {"f", "x", "y"}) fs::create_directories(dir / sub);
  torch::manual_seed(104);
  for (auto id : {"a", "b", "c"}) {
    write_image(dir / "f" / (std::string(id) + ".png"), Image(torch::rand({3, 24, 24})));
    write_image(dir / "x" / (std::string(id) + ".png"), Image(torch::rand({3, 24, 24})));
    write_image(dir / "y" / (std::string(id) + ".png"), Image(torch::rand({1, 24, 24})));
  }
  auto rows = metrics::evaluate_directory(dir / "f", dir / "x", dir / "y", 2);
  bool same = rows.size() == 3;
  for (const auto& r : rows) {
    const auto name = r.image_id + ".png";
    auto s = metrics::report(read_image(dir / "f" / name), read_image(dir / "x" / name),
                             read_image(dir / "y" / name));
    same = same && s.en == r.scores.en && s.ag == r.scores.ag && s.sd == r.scores.sd &&
           s.scd == r.scores.scd && s.vif == r.scores.vif;
  }
  v.check(same, "directory mode equals per-image reports");
  const double elapsed = seconds_since(t0);
  v.check(elapsed < 10, "runtime < 10 s");
  v.note("max errors: SD " + fmt(sd_err, 2) + ", SCD " + fmt(scd_err, 2) + ", VIF " + fmt(vif_err, 2));
  v.note(fmt(elapsed, 3) + " s");
  return v;
}

Verdict locator_contract(Desk& desk) {
  Verdict v;
  const auto t0 = Clock::now();
  TempDir dir("locate");
  const auto& scene = heldout_split().pairs[3];
  const auto& truth = heldout_split().masks[3];
  const std::string command = "the hot object";
  write_image(dir / (command_hash(command) + ".png"), Image(truth.unsqueeze(0)));
  write_image(dir / mask_filename(scene.id, command), Image(truth.unsqueeze(0)));

  StubLocatorServer server(dir.path());
  const int port = server.start();
  HttpLocator http("http://127.0.0.1:" + std::to_string(port) + "/locate", 10.0);
  FileLocator files(dir.path());

  auto got = locate(scene.x, scene.id, "  The HOT object", http);
  auto served = read_image(dir / (command_hash(command) + ".png")).values()[0];
  v.check(bit_equal(got.values, served) && bit_equal(got.values, truth), "served mask decodes identically");
  v.check(got.provenance == MaskProvenance::kExternal, "external provenance");
  auto missing = locate(scene.x, scene.id, "nothing at all", http);
  v.check(!missing.any(), "unknown command yields the empty mask");

  FusionModels models{*desk.brightness, desk.chroma, desk.fcm, desk.remod};
  FusionRun run{scene, 9, 10, std::nullopt};
  auto a = fuse_full(models, run, command, files);
  auto b = fuse_full(models, run, command, http);
  v.check(bit_equal(a.values(), b.values()), "file and external providers give identical fusion");
  server.stop();
  const double elapsed = seconds_since(t0);
  v.check(elapsed < 30, "runtime < 30 s");
  v.note("mask pixels " + fmt(got.values.sum().item<double>(), 4) + ", " + fmt(elapsed, 3) + " s");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cache;
  app.add_option("--model-cache", cache, "Reuse (or store) desk checkpoints in this directory");
  CLI11_PARSE(app, argc, argv);
  std::optional<fs::path> cache_dir;
  if (!cache.empty()) cache_dir = cache;

  torch::set_num_threads(1);
  Desk desk;
  bool all = true;
  std::map<int, std::string> lines;
  auto report = [&](int id, const std::string& title, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    all = all && v.pass();
    std::ostringstream line;
    line << "criterion " << id << ": " << (v.pass() ? "PASS" : "FAIL") << "  " << title << "  -- "
         << v.summary();
    lines[id] = line.str();
    std::cout << line.str() << std::endl;
  };

  report(1, "schedule algebra", schedule_algebra);
  report(2, "loss suite", loss_suite);
  report(7, "metric oracles", metric_oracles);
  report(4, "desk-scale restoration", [&] { return restoration(desk, cache_dir); });
  report(6, "FCM versus fixed rules", [&] { return fcm_ablation(desk, cache_dir); });
  report(5, "fusion complementarity", [&] { return complementarity(desk); });
  report(3, "re-modulation exactness", [&] { return remod_exactness(desk, cache_dir); });
  report(8, "locator contract", [&] { return locator_contract(desk); });

  std::cout << "\nsummary\n";
  for (const auto& [id, line] : lines) std::cout << line << "\n";
  return all ? 0 : 1;
}
