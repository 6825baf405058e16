#include "difuse/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <sstream>
#include <thread>

#include "difuse/error.hpp"
#include "difuse/image_io.hpp"
#include "difuse/losses.hpp"

namespace difuse::metrics {

namespace {

void check_same(const Plane& a, const Plane& b, const char* what) {
  require(a.height == b.height && a.width == b.width, std::string(what) + ": size mismatch");
}

double mean_of(const Plane& p) {
  double s = 0.0;
  for (double v : p.values) s += v;
  return s / static_cast<double>(p.values.size());
}

std::vector<double> gaussian_window(int n) {
  const double sigma = n / 5.0;
  const int half = n / 2;
  std::vector<double> w(static_cast<size_t>(n));
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = i - half;
    w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= total;
  return w;
}

int64_t reflect(int64_t i, int64_t n) {
  // Symmetric padding: ... c b a | a b c ... | c b a ...
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

Plane filter_same(const Plane& p, const std::vector<double>& w) {
  const auto half = static_cast<int64_t>(w.size() / 2);
  Plane tmp{p.height, p.width, std::vector<double>(p.values.size())};
  for (int64_t i = 0; i < p.height; ++i) {
    for (int64_t j = 0; j < p.width; ++j) {
      double s = 0.0;
      for (int64_t k = -half; k <= half; ++k) {
        s += w[static_cast<size_t>(k + half)] * p.at(i, reflect(j + k, p.width));
      }
      tmp.at(i, j) = s;
    }
  }
  Plane out{p.height, p.width, std::vector<double>(p.values.size())};
  for (int64_t i = 0; i < p.height; ++i) {
    for (int64_t j = 0; j < p.width; ++j) {
      double s = 0.0;
      for (int64_t k = -half; k <= half; ++k) {
        s += w[static_cast<size_t>(k + half)] * tmp.at(reflect(i + k, p.height), j);
      }
      out.at(i, j) = s;
    }
  }
  return out;
}

Plane decimate(const Plane& p) {
  Plane out{(p.height + 1) / 2, (p.width + 1) / 2, {}};
  out.values.reserve(static_cast<size_t>(out.height * out.width));
  for (int64_t i = 0; i < p.height; i += 2) {
    for (int64_t j = 0; j < p.width; j += 2) out.values.push_back(p.at(i, j));
  }
  return out;
}

Plane product(const Plane& a, const Plane& b) {
  Plane out = a;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] *= b.values[i];
  return out;
}

torch::Tensor as_hw(const torch::Tensor& t) {
  if (t.dim() == 3) {
    require(t.size(0) == 1, "expected a single-channel image");
    return t[0];
  }
  require(t.dim() == 2, "expected a [H, W] or [1, H, W] image");
  return t;
}

}  // namespace

bool Plane::is_constant() const {
  return std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); });
}

Plane to_plane(const torch::Tensor& img) {
  auto hw = as_hw(img).to(torch::kDouble).contiguous();
  Plane p{hw.size(0), hw.size(1), {}};
  require(p.height > 0 && p.width > 0, "empty image");
  const double* d = hw.data_ptr<double>();
  p.values.assign(d, d + hw.numel());
  for (auto& v : p.values) v *= 255.0;
  return p;
}

double en(const Plane& img, const Constants& k) {
  require(!img.values.empty(), "en: empty image");
  std::vector<double> hist(static_cast<size_t>(k.bins), 0.0);
  const double top = k.bins - 1;
  for (double v : img.values) {
    const double level = std::clamp(std::round(v * top / 255.0), 0.0, top);
    hist[static_cast<size_t>(level)] += 1.0;
  }
  const double n = static_cast<double>(img.values.size());
  double h = 0.0;
  for (double c : hist) {
    if (c > 0.0) {
      const double p = c / n;
      h -= p * std::log2(p);
    }
  }
  return h;
}

double ag(const Plane& img) {
  require(img.height >= 2 && img.width >= 2, "ag: image must be at least 2x2");
  double s = 0.0;
  for (int64_t i = 0; i + 1 < img.height; ++i) {
    for (int64_t j = 0; j + 1 < img.width; ++j) {
      const double gx = img.at(i, j + 1) - img.at(i, j);
      const double gy = img.at(i + 1, j) - img.at(i, j);
      s += std::sqrt((gx * gx + gy * gy) / 2.0);
    }
  }
  return s / static_cast<double>((img.height - 1) * (img.width - 1));
}

double sd(const Plane& img) {
  require(!img.values.empty(), "sd: empty image");
  const double mu = mean_of(img);
  double s = 0.0;
  for (double v : img.values) s += (v - mu) * (v - mu);
  return std::sqrt(s / static_cast<double>(img.values.size()));
}

double pearson(const Plane& a, const Plane& b) {
  check_same(a, b, "pearson");
  if (a.is_constant() || b.is_constant()) return 0.0;
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const double da = a.values[i] - ma;
    const double db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double scd(const Plane& fused, const Plane& x, const Plane& y) {
  check_same(fused, x, "scd");
  check_same(fused, y, "scd");
  Plane dx = fused, dy = fused;
  for (size_t i = 0; i < fused.values.size(); ++i) {
    dx.values[i] -= y.values[i];  // what fused adds beyond y, compared with x
    dy.values[i] -= x.values[i];
  }
  return pearson(dx, x) + pearson(dy, y);
}

double vif_single(const Plane& ref_in, const Plane& dist_in, const Constants& k) {
  check_same(ref_in, dist_in, "vif");
  require(k.vif_scales >= 1, "vif: need at least one scale");
  const int largest = (1 << k.vif_scales) + 1;
  require(ref_in.height >= largest && ref_in.width >= largest,
          "vif: image smaller than the largest filter support");

  constexpr double kEps = 1e-10;
  Plane ref = ref_in;
  Plane dist = dist_in;
  double num = 0.0, den = 0.0;
  for (int scale = 1; scale <= k.vif_scales; ++scale) {
    const auto win = gaussian_window((1 << (k.vif_scales - scale + 1)) + 1);
    if (scale > 1) {
      ref = decimate(filter_same(ref, win));
      dist = decimate(filter_same(dist, win));
    }
    const Plane mu1 = filter_same(ref, win);
    const Plane mu2 = filter_same(dist, win);
    const Plane e11 = filter_same(product(ref, ref), win);
    const Plane e22 = filter_same(product(dist, dist), win);
    const Plane e12 = filter_same(product(ref, dist), win);
    for (size_t i = 0; i < ref.values.size(); ++i) {
      double s1 = std::max(e11.values[i] - mu1.values[i] * mu1.values[i], 0.0);
      const double s2 = std::max(e22.values[i] - mu2.values[i] * mu2.values[i], 0.0);
      const double s12 = e12.values[i] - mu1.values[i] * mu2.values[i];
      double g = s12 / (s1 + kEps);
      double sv = s2 - g * s12;
      if (s1 < kEps) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < kEps) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      sv = std::max(sv, kEps);
      num += std::log10(1.0 + g * g * s1 / (sv + k.vif_noise_variance));
      den += std::log10(1.0 + s1 / k.vif_noise_variance);
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

double vif(const Plane& fused, const Plane& x, const Plane& y, const Constants& k) {
  check_same(fused, x, "vif");
  check_same(fused, y, "vif");
  return 0.5 * (vif_single(x, fused, k) + vif_single(y, fused, k));
}

double en(const torch::Tensor& img, const Constants& k) { return en(to_plane(img), k); }
double ag(const torch::Tensor& img) { return ag(to_plane(img)); }
double sd(const torch::Tensor& img) { return sd(to_plane(img)); }
double scd(const torch::Tensor& fused, const torch::Tensor& x, const torch::Tensor& y) {
  return scd(to_plane(fused), to_plane(x), to_plane(y));
}
double vif(const torch::Tensor& fused, const torch::Tensor& x, const torch::Tensor& y,
           const Constants& k) {
  return vif(to_plane(fused), to_plane(x), to_plane(y), k);
}

MetricReport report(const Image& fused, const Image& x, const Image& y, const Constants& k) {
  const auto f = to_plane(brightness_of(fused).values);
  const auto px = to_plane(brightness_of(x).values);
  const auto py = to_plane(brightness_of(y).values);
  MetricReport r;
  r.en = en(f, k);
  r.ag = ag(f);
  r.sd = sd(f);
  r.scd = scd(f, px, py);
  r.vif = vif(f, px, py, k);
  return r;
}

double region_mean(const torch::Tensor& img, const torch::Tensor& region) {
  auto v = as_hw(img).to(torch::kDouble);
  auto m = as_hw(region).to(torch::kDouble);
  require(v.sizes() == m.sizes(), "region_mean: size mismatch");
  const double n = m.sum().item<double>();
  require(n > 0.0, "region_mean: empty region");
  return (v * m).sum().item<double>() / n;
}

double sobel_energy(const torch::Tensor& img, const torch::Tensor& region) {
  auto v = as_hw(img).to(torch::kDouble);
  auto m = as_hw(region).to(torch::kDouble);
  require(v.sizes() == m.sizes(), "sobel_energy: size mismatch");
  const double n = m.sum().item<double>();
  require(n > 0.0, "sobel_energy: empty region");
  auto [gx, gy] = sobel(v.unsqueeze(0).unsqueeze(0));
  auto e = (gx.pow(2) + gy.pow(2))[0][0];
  return (e * m).sum().item<double>() / n;
}

std::vector<EvaluationRow> evaluate_directory(const std::filesystem::path& fused_dir,
                                              const std::filesystem::path& x_dir,
                                              const std::filesystem::path& y_dir, int workers,
                                              const Constants& k) {
  for (const auto& d : {fused_dir, x_dir, y_dir}) {
    if (!std::filesystem::is_directory(d)) throw NotFoundError("not a directory: " + d.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(fused_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    for (const auto& d : {x_dir, y_dir}) {
      if (!std::filesystem::exists(d / f.filename())) {
        throw NotFoundError("missing source image: " + (d / f.filename()).string());
      }
    }
  }

  std::vector<EvaluationRow> rows(files.size());
  std::vector<std::exception_ptr> errors(files.size());
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (size_t i = next++; i < files.size(); i = next++) {
      try {
        const auto name = files[i].filename();
        rows[i] = {files[i].stem().string(),
                   report(read_image(files[i]), read_image(x_dir / name), read_image(y_dir / name),
                          k)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(files.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::string to_csv(const std::vector<EvaluationRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "image_id,en,ag,sd,scd,vif\n";
  MetricReport mean;
  for (const auto& r : rows) {
    const auto& s = r.scores;
    os << r.image_id << ',' << s.en << ',' << s.ag << ',' << s.sd << ',' << s.scd << ',' << s.vif
       << '\n';
    mean.en += s.en;
    mean.ag += s.ag;
    mean.sd += s.sd;
    mean.scd += s.scd;
    mean.vif += s.vif;
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  os << "mean," << mean.en / n << ',' << mean.ag / n << ',' << mean.sd / n << ',' << mean.scd / n
     << ',' << mean.vif / n << '\n';
  return os.str();
}

}  // namespace difuse::metrics
