#include <cmath>
#include <random>

#include "difuse/error.hpp"
#include "difuse/image_io.hpp"
#include "difuse/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace difuse;
using namespace difuse::metrics;
using doctest::Approx;
using testing::random_plane;

namespace {

Plane plane(int64_t h, int64_t w, std::vector<double> v) { return {h, w, std::move(v)}; }

Plane transpose(const Plane& p) {
  Plane t{p.width, p.height, std::vector<double>(p.values.size())};
  for (int64_t i = 0; i < p.height; ++i) {
    for (int64_t j = 0; j < p.width; ++j) t.at(j, i) = p.at(i, j);
  }
  return t;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("entropy") {
    CHECK(en(plane(2, 2, {7, 7, 7, 7})) == 0.0);
    CHECK(en(plane(2, 2, {0, 0, 255, 255})) == Approx(1.0).epsilon(1e-12));
    Plane ramp{16, 16, {}};
    for (int i = 0; i < 256; ++i) ramp.values.push_back(i);
    CHECK(en(ramp) == Approx(8.0).epsilon(1e-12));
    auto via_tensor = en(torch::arange(256, torch::kFloat64).view({16, 16}) / 255.0);
    CHECK(via_tensor == Approx(8.0).epsilon(1e-12));
  }

  TEST_CASE("average gradient") {
    CHECK(ag(plane(3, 3, std::vector<double>(9, 4.0))) == 0.0);
    Plane ramp{4, 6, {}};
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 6; ++j) ramp.values.push_back(j);
    }
    CHECK(ag(ramp) == Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK(ag(transpose(ramp)) == Approx(ag(ramp)).epsilon(1e-12));
    CHECK_THROWS_AS(ag(plane(1, 3, {1, 2, 3})), ValidationError);
  }

  TEST_CASE("standard deviation") {
    CHECK(sd(plane(2, 2, {3, 3, 3, 3})) == 0.0);
    CHECK(sd(plane(2, 2, {0, 255, 0, 255})) == Approx(127.5).epsilon(1e-12));
    std::mt19937_64 rng(1);
    auto p = random_plane(rng, 8, 8);
    double m = 0;
    for (double v : p.values) m += v;
    m /= 64;
    double ss = 0;
    for (double v : p.values) ss += (v - m) * (v - m);
    CHECK(std::abs(sd(p) - std::sqrt(ss / 64)) < 1e-9);
  }

  TEST_CASE("permutation and transposition invariance") {
    std::mt19937_64 rng(2);
    for (int k = 0; k < 20; ++k) {
      auto p = random_plane(rng, 6, 9);
      auto q = p;
      std::shuffle(q.values.begin(), q.values.end(), rng);
      CHECK(en(q) == en(p));
      CHECK(sd(q) == Approx(sd(p)).epsilon(1e-12));
      auto t = transpose(p);
      CHECK(en(t) == en(p));
      CHECK(sd(t) == Approx(sd(p)).epsilon(1e-12));
      CHECK(ag(t) == Approx(ag(p)).epsilon(1e-12));
    }
  }

  TEST_CASE("pearson and scd against direct oracles") {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 20; ++k) {
      auto f = random_plane(rng, 8, 8), x = random_plane(rng, 8, 8), y = random_plane(rng, 8, 8);
      std::vector<double> fy, fx;
      for (size_t i = 0; i < 64; ++i) {
        fy.push_back(f.values[i] - y.values[i]);
        fx.push_back(f.values[i] - x.values[i]);
      }
      const double oracle = testing::pearson_oracle(fy, x.values) + testing::pearson_oracle(fx, y.values);
      CHECK(std::abs(scd(f, x, y) - oracle) < 1e-9);
      CHECK(scd(f, x, y) == Approx(scd(f, y, x)).epsilon(1e-12));
      CHECK((scd(f, x, y) >= -2.0 && scd(f, x, y) <= 2.0));
    }
    CHECK(pearson(plane(1, 3, {1, 1, 1}), plane(1, 3, {1, 2, 3})) == 0.0);
  }

  TEST_CASE("scd of perfect complements and of a copy") {
    Plane x{4, 4, {}}, y{4, 4, {}}, sum{4, 4, {}};
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        x.values.push_back(i % 2 ? 10 : 0);
        y.values.push_back(j % 2 ? 10 : 0);
      }
    }
    for (size_t i = 0; i < 16; ++i) sum.values.push_back(x.values[i] + y.values[i]);
    CHECK(scd(sum, x, y) == Approx(2.0).epsilon(1e-12));
    CHECK(pearson(plane(4, 4, std::vector<double>(16, 0.0)), y) == 0.0);
    std::vector<double> d;
    for (size_t i = 0; i < 16; ++i) d.push_back(x.values[i] - y.values[i]);
    CHECK(scd(x, x, y) == Approx(testing::pearson_oracle(d, x.values)).epsilon(1e-12));
  }

  TEST_CASE("vif agrees with an independent 2D implementation") {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 3; ++k) {
      auto x = random_plane(rng, 40, 36);
      auto f = x;
      std::normal_distribution<double> noise(0, 20);
      for (auto& v : f.values) v = std::clamp(v * 0.7 + noise(rng), 0.0, 255.0);
      const double got = vif_single(x, f);
      const double oracle = testing::VifOracle::run(x, f, 2.0, 4);
      CHECK(got == Approx(oracle).epsilon(1e-9));
    }
  }

  TEST_CASE("vif bounds") {
    std::mt19937_64 rng(5);
    auto x = random_plane(rng, 32, 32);
    CHECK(std::abs(vif(x, x, x) - 1.0) < 1e-6);
    auto y = random_plane(rng, 32, 32);
    auto flat = plane(32, 32, std::vector<double>(1024, 128.0));
    CHECK(vif(flat, x, y) < 0.1);
    for (int k = 0; k < 100; ++k) {
      auto a = random_plane(rng, 17, 17), b = random_plane(rng, 17, 17), c = random_plane(rng, 17, 17);
      CHECK(vif(a, b, c) >= 0.0);
    }
    CHECK(vif(flat, flat, flat) == 0.0);
    CHECK_THROWS_AS(vif_single(random_plane(rng, 16, 16), random_plane(rng, 16, 16)), ValidationError);
  }

  TEST_CASE("report composes the individual metrics; constant inputs hit the guards") {
    Image f(torch::rand({3, 20, 20})), x(torch::rand({3, 20, 20})), y(torch::rand({1, 20, 20}));
    auto r = report(f, x, y);
    const auto pf = to_plane(brightness_of(f).values), px = to_plane(brightness_of(x).values),
               py = to_plane(y.values());
    CHECK(r.en == en(pf));
    CHECK(r.ag == ag(pf));
    CHECK(r.sd == sd(pf));
    CHECK(r.scd == scd(pf, px, py));
    CHECK(r.vif == vif(pf, px, py));

    auto c = Image::constant(1, 20, 20, 0.4);
    auto z = report(c, c, c);
    CHECK(z.en == 0.0);
    CHECK(z.ag == 0.0);
    CHECK(z.sd == 0.0);
    CHECK(z.scd == 0.0);
    CHECK(z.vif == 0.0);
  }

  TEST_CASE("region mean and sobel energy") {
    auto img = torch::zeros({8, 8}, torch::kFloat64);
    img.index_put_({torch::indexing::Slice(), torch::indexing::Slice(4, 8)}, 1.0);
    auto left = torch::zeros({8, 8});
    left.index_put_({torch::indexing::Slice(), torch::indexing::Slice(0, 4)}, 1.0);
    CHECK(region_mean(img, left) == 0.0);
    CHECK(region_mean(img, 1 - left) == 1.0);
    CHECK(sobel_energy(torch::full({8, 8}, 0.3), left) == 0.0);
    auto edge = torch::zeros({8, 8});
    edge.index_put_({torch::indexing::Slice(), 3}, 1.0);
    CHECK(sobel_energy(img, edge) == Approx(16.0).epsilon(1e-12));
    CHECK_THROWS_AS(region_mean(img, torch::zeros({8, 8})), ValidationError);
  }

  TEST_CASE("directory evaluation equals per-image reports and writes one row per image plus a mean") {
    testing::TempDir dir("metrics");
    for (auto sub : {"f", "x", "y"}) std::filesystem::create_directories(dir / sub);
    std::vector<std::string> ids{"b", "a", "c"};
    for (const auto& id : ids) {
      write_image(dir / "f" / (id + ".png"), Image(torch::rand({3, 24, 24})));
      write_image(dir / "x" / (id + ".png"), Image(torch::rand({3, 24, 24})));
      write_image(dir / "y" / (id + ".png"), Image(torch::rand({1, 24, 24})));
    }
    auto rows = evaluate_directory(dir / "f", dir / "x", dir / "y", 1);
    auto rows4 = evaluate_directory(dir / "f", dir / "x", dir / "y", 4);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].image_id == "a");
    CHECK(rows[2].image_id == "c");
    for (size_t i = 0; i < 3; ++i) {
      const auto name = rows[i].image_id + ".png";
      auto r = report(read_image(dir / "f" / name), read_image(dir / "x" / name),
                      read_image(dir / "y" / name));
      CHECK(rows[i].scores.vif == r.vif);
      CHECK(rows[i].scores.scd == r.scd);
      CHECK(rows4[i].scores.en == r.en);
    }
    const auto csv = to_csv(rows);
    CHECK(csv == to_csv(rows4));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(csv.rfind("image_id,en,ag,sd,scd,vif\n", 0) == 0);
    CHECK(csv.find("\nmean,") != std::string::npos);

    std::filesystem::remove(dir / "y" / "b.png");
    CHECK_THROWS_AS(evaluate_directory(dir / "f", dir / "x", dir / "y", 1), NotFoundError);
  }
}
