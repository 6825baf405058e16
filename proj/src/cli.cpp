#include "difuse/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "difuse/checkpoint.hpp"
#include "difuse/config.hpp"
#include "difuse/dataset.hpp"
#include "difuse/degrade.hpp"
#include "difuse/error.hpp"
#include "difuse/image_io.hpp"
#include "difuse/locate.hpp"
#include "difuse/metrics.hpp"
#include "difuse/sampler.hpp"
#include "difuse/training.hpp"

namespace difuse::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
};

struct DataArgs {
  std::string manifest;
  int64_t synthetic = 0;
};

struct TrainArgs {
  DataArgs data;
  std::string out;
  int64_t steps = 0;  // 0 keeps the configured budget
  std::string checkpoint_dir;
  std::string component = "brightness";
  std::string diffusion;
  std::string fcm;
};

struct DegradeArgs {
  std::string in, out, severity;
  std::vector<double> gains;
  double gamma = 1.0;
  double sigma = 0.0;
};

struct FuseArgs {
  std::string x, y, out, id;
  std::string x_dir, y_dir, out_dir;
  std::string ckpt_dir;
  std::string text, mask_dir, locator_url;
  bool no_locator = false;
  int workers = 1;
};

struct EvalArgs {
  std::string fused_dir, x_dir, y_dir, out;
  int workers = 1;
};

struct ServeArgs {
  std::string mask_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
};

Config resolve_config(const Common& c, std::string& source) {
  std::string path = c.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("DIFUSE_CONFIG"); env && *env) path = env;
  }
  if (path.empty()) {
    source = "defaults";
    return Config{};
  }
  source = path;
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path);
  return Config::load(path);
}

void log_resolved(std::ostream& err, const std::string& verb, const std::string& source,
                  const Config& cfg, const nlohmann::json& seeds) {
  err << "[difuse] verb=" << verb << " config=" << source << " seeds=" << seeds.dump() << "\n";
  std::istringstream lines(cfg.to_text());
  for (std::string line; std::getline(lines, line);) err << "[difuse]   " << line << "\n";
}

LoadedSplit training_pairs(const DataArgs& d, const Config& cfg, uint64_t seed) {
  if (!d.manifest.empty()) {
    auto split = load_split(read_manifest(d.manifest), "train");
    if (split.pairs.empty()) throw ValidationError("manifest has no 'train' records");
    return split;
  }
  require(d.synthetic > 0, "give --manifest or --synthetic N");
  return synthetic_split(d.synthetic, cfg.io.image_size, seed);
}

TrainingConfig effective(TrainingConfig t, const Common& c, int64_t steps) {
  if (c.seed_set) t.seed = c.seed;
  if (steps > 0) t.steps = steps;
  t.validate();
  return t;
}

ProgressFn progress_logger(std::ostream& err, const std::string& what, int64_t steps) {
  const int64_t every = std::max<int64_t>(1, steps / 20);
  return [&err, what, every, steps](int64_t step, double loss) {
    if (step % every == 0 || step == steps) {
      err << "[difuse] " << what << " step " << step << "/" << steps << " loss " << loss << "\n";
    }
  };
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------- verbs

int do_train_diffusion(const Common& c, const TrainArgs& a, std::ostream& err) {
  std::string source;
  const auto cfg = resolve_config(c, source);
  const auto kind = parse_component(a.component);
  const auto tc = effective(cfg.diffusion.train, c, a.steps);
  log_resolved(err, "train-diffusion", source, cfg, {{"train", tc.seed}});

  const auto pairs = training_pairs(a.data, cfg, tc.seed);
  const auto ds = build_component_dataset(pairs.pairs, kind, cfg.degradation, tc.seed);
  std::optional<fs::path> ck_dir;
  if (!a.checkpoint_dir.empty()) ck_dir = a.checkpoint_dir;
  auto r = train_restoration_diffusion(ds, cfg.diffusion.schedule(),
                                       cfg.diffusion.spec(latent_channels(kind)), tc, ck_dir,
                                       progress_logger(err, to_string(kind), tc.steps));
  ensure_parent(a.out);
  r.checkpoint.save(a.out);
  err << "[difuse] held-out loss " << r.heldout_before << " -> " << r.heldout_after << "\n";
  err << "[difuse] wrote " << a.out << "\n";
  return kOk;
}

int do_train_fcm(const Common& c, const TrainArgs& a, std::ostream& err) {
  std::string source;
  const auto cfg = resolve_config(c, source);
  const auto tc = effective(cfg.fcm.train, c, a.steps);
  log_resolved(err, "train-fcm", source, cfg, {{"train", tc.seed}});

  auto model = diffusion_from_checkpoint(Checkpoint::load(a.diffusion));
  const auto pairs = training_pairs(a.data, cfg, tc.seed);
  const auto data = build_fusion_dataset(pairs.pairs, pairs.masks, cfg.degradation, tc.seed);
  auto r = train_fcm(model, data, cfg.fcm.reduction, tc, progress_logger(err, "fcm", tc.steps));
  ensure_parent(a.out);
  r.checkpoint.save(a.out);
  err << "[difuse] fcm loss " << r.heldout_before << " -> " << r.heldout_after << "\n";
  err << "[difuse] wrote " << a.out << "\n";
  return kOk;
}

int do_train_remod(const Common& c, const TrainArgs& a, std::ostream& err) {
  std::string source;
  const auto cfg = resolve_config(c, source);
  const auto tc = effective(cfg.remod.train, c, a.steps);
  log_resolved(err, "train-remod", source, cfg, {{"train", tc.seed}});

  auto model = diffusion_from_checkpoint(Checkpoint::load(a.diffusion));
  auto fcm = fcm_from_checkpoint(Checkpoint::load(a.fcm));
  const auto pairs = training_pairs(a.data, cfg, tc.seed);
  const auto data = build_fusion_dataset(pairs.pairs, pairs.masks, cfg.degradation, tc.seed);
  auto r = train_remod_block(model, fcm, data, cfg.remod.hidden, tc,
                             progress_logger(err, "remod", tc.steps));
  ensure_parent(a.out);
  r.checkpoint.save(a.out);
  err << "[difuse] remod objective " << r.heldout_before << " -> " << r.heldout_after << "\n";
  err << "[difuse] wrote " << a.out << "\n";
  return kOk;
}

int do_degrade(const Common& c, const DegradeArgs& a, std::ostream& err) {
  std::string source;
  const auto cfg = resolve_config(c, source);
  DegradationSpec spec;
  if (!a.severity.empty()) {
    std::mt19937_64 rng(c.seed);
    spec = sample_spec(parse_severity(a.severity), rng, cfg.degradation.ranges);
  } else {
    if (!a.gains.empty()) {
      require(a.gains.size() == 3, "--gains takes three values");
      spec.cast_gains = {a.gains[0], a.gains[1], a.gains[2]};
    }
    spec.gamma = a.gamma;
    spec.noise_sigma = a.sigma;
    spec.seed = c.seed;
  }
  spec.validate();
  log_resolved(err, "degrade", source, cfg, {{"degrade", c.seed}});
  err << "[difuse] spec gains=(" << spec.cast_gains[0] << "," << spec.cast_gains[1] << ","
      << spec.cast_gains[2] << ") gamma=" << spec.gamma << " sigma=" << spec.noise_sigma
      << " noise_seed=" << spec.seed << "\n";
  const auto img = read_image(a.in);
  ensure_parent(a.out);
  write_image(a.out, apply(img, spec));
  return kOk;
}

std::unique_ptr<LocatorProvider> make_provider(const FuseArgs& a, const Config& cfg) {
  const int chosen = (a.no_locator ? 1 : 0) + (a.mask_dir.empty() ? 0 : 1) +
                     (a.locator_url.empty() ? 0 : 1);
  if (a.text.empty()) {
    require(chosen == 0, "locator flags need --text");
    return nullptr;
  }
  require(chosen == 1, "--text needs exactly one of --mask-dir, --locator-url, --no-locator");
  if (a.no_locator) return std::make_unique<NullLocator>();
  if (!a.mask_dir.empty()) {
    require(fs::is_directory(a.mask_dir), "--mask-dir is not a directory: " + a.mask_dir);
    return std::make_unique<FileLocator>(a.mask_dir);
  }
  return std::make_unique<HttpLocator>(a.locator_url, cfg.io.locator_timeout_s);
}

struct FuseJob {
  std::string id;
  fs::path x, y, out;
};

std::vector<FuseJob> fuse_jobs(const FuseArgs& a) {
  std::vector<FuseJob> jobs;
  const bool single = !a.x.empty() || !a.y.empty() || !a.out.empty();
  const bool batch = !a.x_dir.empty() || !a.y_dir.empty() || !a.out_dir.empty();
  require(single != batch, "use either --x/--y/--out or --x-dir/--y-dir/--out-dir");
  if (single) {
    require(!a.x.empty() && !a.y.empty() && !a.out.empty(), "--x, --y and --out are all required");
    jobs.push_back({a.id.empty() ? fs::path(a.x).stem().string() : a.id, a.x, a.y, a.out});
    return jobs;
  }
  require(!a.x_dir.empty() && !a.y_dir.empty() && !a.out_dir.empty(),
          "--x-dir, --y-dir and --out-dir are all required");
  require(a.id.empty(), "--id applies to single-image fusion only");
  for (const auto& e : fs::directory_iterator(a.x_dir)) {
    if (e.path().extension() != ".png") continue;
    const auto name = e.path().filename();
    const auto y = fs::path(a.y_dir) / name;
    if (!fs::exists(y)) throw ValidationError("no Y image for " + name.string());
    jobs.push_back({e.path().stem().string(), e.path(), y, fs::path(a.out_dir) / name});
  }
  require(!jobs.empty(), "no PNG files in " + a.x_dir);
  std::sort(jobs.begin(), jobs.end(), [](const auto& l, const auto& r) { return l.id < r.id; });
  return jobs;
}

int do_fuse(const Common& c, const FuseArgs& a, std::ostream& err) {
  std::string source;
  const auto cfg = resolve_config(c, source);
  require(a.workers >= 1, "--workers must be >= 1");
  const auto jobs = fuse_jobs(a);
  const auto provider = make_provider(a, cfg);
  if (!fs::is_directory(a.ckpt_dir)) throw NotFoundError("checkpoint directory not found: " + a.ckpt_dir);
  log_resolved(err, "fuse", source, cfg, {{"brightness", c.seed}, {"chroma", c.seed + 1}});

  auto models = load_models(a.ckpt_dir);
  if (!a.out_dir.empty()) fs::create_directories(a.out_dir);

  std::atomic<size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const auto& job = jobs[i];
        FusionRun run{{job.id, read_image(job.x), read_image(job.y)}, c.seed, c.seed + 1, {}};
        const auto fused = provider ? fuse_full(models, run, a.text, *provider)
                                    : fuse_full(models, run);
        ensure_parent(job.out);
        write_image(job.out, fused);
        std::lock_guard lock(mu);
        err << "[difuse] fused " << job.id << " -> " << job.out.string() << "\n";
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int n = std::min<int>(a.workers, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return kOk;
}

int do_evaluate(const Common& c, const EvalArgs& a, std::ostream& err) {
  std::string source;
  const auto cfg = resolve_config(c, source);
  require(a.workers >= 1, "--workers must be >= 1");
  log_resolved(err, "evaluate", source, cfg, nlohmann::json::object());
  metrics::Constants k;
  k.vif_noise_variance = cfg.io.vif_noise_variance;
  k.vif_scales = static_cast<int>(cfg.io.vif_scales);
  const auto rows = metrics::evaluate_directory(a.fused_dir, a.x_dir, a.y_dir, a.workers, k);
  ensure_parent(a.out);
  std::ofstream f(a.out, std::ios::trunc);
  if (!f) throw Error("cannot write " + a.out);
  f << metrics::to_csv(rows);
  err << "[difuse] scored " << rows.size() << " images -> " << a.out << "\n";
  return kOk;
}

int do_serve(const ServeArgs& a, std::ostream& err) {
  require(fs::is_directory(a.mask_dir), "--mask-dir is not a directory: " + a.mask_dir);
  require(a.port > 0 && a.port < 65536, "--port must be in 1..65535");
  StubLocatorServer server(a.mask_dir);
  err << "[difuse] stub locator on http://" << a.host << ":" << a.port << "/locate\n" << std::flush;
  server.listen_blocking(a.host, a.port);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-modulated diffusion fusion"};
  app.require_subcommand(1);
  Common common;

  auto add_common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--config", common.config_path, "Config file (falls back to $DIFUSE_CONFIG)");
    if (with_seed) {
      sub->add_option("--seed", common.seed, "Seed for every stochastic choice")
          ->each([&](const std::string&) { common.seed_set = true; });
    }
  };
  auto add_data = [](CLI::App* sub, DataArgs& d) {
    auto* m = sub->add_option("--manifest", d.manifest, "JSON-lines manifest (train split)")
                  ->check(CLI::ExistingFile);
    auto* s = sub->add_option("--synthetic", d.synthetic, "Generate N synthetic scenes instead")
                  ->check(CLI::PositiveNumber);
    m->excludes(s);
  };

  TrainArgs ta;
  auto* td = app.add_subcommand("train-diffusion", "Train a brightness or chroma denoiser");
  add_common(td, true);
  add_data(td, ta.data);
  td->add_option("--component", ta.component, "brightness | chroma")
      ->check(CLI::IsMember({"brightness", "chroma"}));
  td->add_option("--out", ta.out, "Output checkpoint")->required();
  td->add_option("--steps", ta.steps, "Override the step budget")->check(CLI::PositiveNumber);
  td->add_option("--checkpoint-dir", ta.checkpoint_dir, "Directory for periodic checkpoints");

  auto* tf = app.add_subcommand("train-fcm", "Train the fusion control module");
  add_common(tf, true);
  add_data(tf, ta.data);
  tf->add_option("--diffusion", ta.diffusion, "Brightness checkpoint (frozen)")
      ->required()->check(CLI::ExistingFile);
  tf->add_option("--out", ta.out, "Output checkpoint")->required();
  tf->add_option("--steps", ta.steps, "Override the step budget")->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train-remod", "Train the re-modulation block");
  add_common(tr, true);
  add_data(tr, ta.data);
  tr->add_option("--diffusion", ta.diffusion, "Brightness checkpoint (frozen)")
      ->required()->check(CLI::ExistingFile);
  tr->add_option("--fcm", ta.fcm, "FCM checkpoint (frozen)")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out, "Output checkpoint")->required();
  tr->add_option("--steps", ta.steps, "Override the step budget")->check(CLI::PositiveNumber);

  DegradeArgs da;
  auto* dg = app.add_subcommand("degrade", "Apply a composite degradation to one image");
  add_common(dg, true);
  dg->add_option("--in", da.in, "Input PNG")->required()->check(CLI::ExistingFile);
  dg->add_option("--out", da.out, "Output PNG")->required();
  auto* sev = dg->add_option("--severity", da.severity, "light | medium | heavy (random spec)")
                  ->check(CLI::IsMember({"light", "medium", "heavy"}));
  auto* gains = dg->add_option("--gains", da.gains, "Explicit r g b cast gains")->expected(3);
  auto* gamma = dg->add_option("--gamma", da.gamma, "Explicit exposure exponent");
  auto* sigma = dg->add_option("--sigma", da.sigma, "Explicit noise standard deviation");
  sev->excludes(gains)->excludes(gamma)->excludes(sigma);

  FuseArgs fa;
  auto* fu = app.add_subcommand("fuse", "Fuse a registered pair (or two directories of pairs)");
  add_common(fu, true);
  fu->add_option("--x", fa.x, "Visible (color) PNG")->check(CLI::ExistingFile);
  fu->add_option("--y", fa.y, "Infrared / second-modality PNG")->check(CLI::ExistingFile);
  fu->add_option("--out", fa.out, "Fused PNG");
  fu->add_option("--id", fa.id, "Image id for mask lookup (default: stem of --x)");
  fu->add_option("--x-dir", fa.x_dir, "Directory of X PNGs")->check(CLI::ExistingDirectory);
  fu->add_option("--y-dir", fa.y_dir, "Directory of same-named Y PNGs")->check(CLI::ExistingDirectory);
  fu->add_option("--out-dir", fa.out_dir, "Directory for fused PNGs");
  fu->add_option("--ckpt-dir", fa.ckpt_dir, "Directory with brightness/chroma/fcm/remod checkpoints")
      ->required();
  fu->add_option("--text", fa.text, "Text command naming the object to emphasize");
  fu->add_option("--mask-dir", fa.mask_dir, "File-backed locator directory");
  fu->add_option("--locator-url", fa.locator_url, "External locator endpoint");
  fu->add_flag("--no-locator", fa.no_locator, "Resolve every command to the empty mask");
  fu->add_option("--workers", fa.workers, "Parallel images in directory mode");

  EvalArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score fused images with EN, AG, SD, SCD and VIF");
  add_common(ev, false);
  ev->add_option("--fused-dir", ea.fused_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--x-dir", ea.x_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--y-dir", ea.y_dir)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", ea.out, "CSV output")->required();
  ev->add_option("--workers", ea.workers, "Parallel images");

  auto* pc = app.add_subcommand("print-config", "Print the resolved configuration");
  add_common(pc, false);

  ServeArgs sa;
  auto* sv = app.add_subcommand("serve-stub-locator", "Serve masks over the locator wire format");
  sv->add_option("--mask-dir", sa.mask_dir, "Directory of <command-hash>.png masks")->required();
  sv->add_option("--host", sa.host);
  sv->add_option("--port", sa.port);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidationError;
  }

  try {
    if (td->parsed()) return do_train_diffusion(common, ta, err);
    if (tf->parsed()) return do_train_fcm(common, ta, err);
    if (tr->parsed()) return do_train_remod(common, ta, err);
    if (dg->parsed()) return do_degrade(common, da, err);
    if (fu->parsed()) return do_fuse(common, fa, err);
    if (ev->parsed()) return do_evaluate(common, ea, err);
    if (sv->parsed()) return do_serve(sa, err);
    if (pc->parsed()) {
      std::string source;
      const auto cfg = resolve_config(common, source);
      out << "# source: " << source << "\n" << cfg.to_text();
      return kOk;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  err << app.help();
  return kValidationError;
}

}  // namespace difuse::cli
