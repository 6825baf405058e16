#include <fstream>

#include "difuse/dataset.hpp"
#include "difuse/error.hpp"
#include "difuse/image_io.hpp"
#include "difuse/metrics.hpp"
#include "support.hpp"

using namespace difuse;

TEST_SUITE("dataset") {
  TEST_CASE("synthetic scenes are deterministic and well formed") {
    auto a = synthetic_scene(32, 7, 3);
    auto b = synthetic_scene(32, 7, 3);
    auto c = synthetic_scene(32, 7, 4);
    CHECK(testing::bit_equal(a.pair.x.values(), b.pair.x.values()));
    CHECK(testing::bit_equal(a.pair.y.values(), b.pair.y.values()));
    CHECK_FALSE(testing::bit_equal(a.pair.x.values(), c.pair.x.values()));
    CHECK(a.pair.id == "syn3");
    CHECK(a.pair.x.is_color());
    CHECK(a.pair.y.channels() == 1);
    CHECK(a.object_mask.sizes() == torch::IntArrayRef({32, 32}));
    CHECK(((a.object_mask == 0) | (a.object_mask == 1)).all().item<bool>());
    CHECK(a.object_mask.sum().item<float>() > 0);
    CHECK_THROWS_AS(synthetic_scene(4, 0, 0), ValidationError);
  }

  TEST_CASE("the hot object is bright in Y and dim in X") {
    for (int64_t i = 0; i < 10; ++i) {
      auto s = synthetic_scene(32, 1, i);
      const double in_y = metrics::region_mean(s.pair.y.values(), s.object_mask);
      const double in_x = metrics::region_mean(brightness_of(s.pair.x).values, s.object_mask);
      const double out_y = metrics::region_mean(s.pair.y.values(), 1 - s.object_mask);
      CHECK(in_y >= 0.75);
      CHECK(in_x <= 0.3 + 1e-6);
      CHECK(in_y > out_y);
    }
  }

  TEST_CASE("disjoint pairs keep disk and square apart") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      auto d = disjoint_pair(32, seed);
      CHECK((d.disk_mask * d.square_mask).sum().item<float>() == 0.0f);
      CHECK(d.disk_mask.sum().item<float>() > 0);
      CHECK(d.square_mask.sum().item<float>() > 0);
      const auto xb = brightness_of(d.pair.x).values;
      CHECK(metrics::region_mean(xb, d.disk_mask) >= 0.85 - 1e-6);
      CHECK(metrics::sobel_energy(xb, d.square_mask) < 0.05);
      CHECK(metrics::sobel_energy(d.pair.y.values(), d.square_mask) > 0.1);
      CHECK(metrics::region_mean(d.pair.y.values(), d.disk_mask) < 0.45);
    }
  }

  TEST_CASE("manifest round trip resolves relative paths") {
    testing::TempDir dir("manifest");
    std::vector<ManifestRecord> recs(2);
    recs[0] = {"x/a.png", "y/a.png", std::nullopt, "train"};
    recs[1] = {"x/b.png", "y/b.png", std::filesystem::path("m/b.png"), "test"};
    write_manifest(dir / "set.jsonl", recs);
    auto back = read_manifest(dir / "set.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].x_path == dir.path() / "x/a.png");
    CHECK_FALSE(back[0].mask_path.has_value());
    CHECK(back[1].split == "test");
    CHECK(*back[1].mask_path == dir.path() / "m/b.png");

    std::ofstream(dir / "bad.jsonl") << "{\"x_path\": \"a\"}\n";
    CHECK_THROWS_AS(read_manifest(dir / "bad.jsonl"), FormatError);
    CHECK_THROWS_AS(read_manifest(dir / "none.jsonl"), NotFoundError);
  }

  TEST_CASE("load_split reads pairs and thresholds masks") {
    testing::TempDir dir("split");
    auto s = synthetic_scene(16, 2, 0);
    write_image(dir / "x" / "p.png", s.pair.x);
    write_image(dir / "y" / "p.png", s.pair.y);
    write_image(dir / "m" / "p.png", Image(s.object_mask.unsqueeze(0) * 0.7 + 0.1));
    write_manifest(dir / "set.jsonl", {{"x/p.png", "y/p.png", std::filesystem::path("m/p.png"), "train"},
                                      {"x/p.png", "y/p.png", std::nullopt, "test"}});
    auto recs = read_manifest(dir / "set.jsonl");
    auto train = load_split(recs, "train");
    REQUIRE(train.pairs.size() == 1);
    CHECK(train.pairs[0].id == "p");
    CHECK(testing::bit_equal(train.masks[0], s.object_mask));
    auto test = load_split(recs, "test");
    REQUIRE(test.pairs.size() == 1);
    CHECK_FALSE(test.masks[0].defined());
    CHECK(load_split(recs, "val").pairs.empty());
  }

  TEST_CASE("component datasets") {
    auto split = synthetic_split(3, 16, 5);
    DegradationSection cfg;
    auto b = build_component_dataset(split.pairs, ComponentKind::kBrightness, cfg, 1);
    CHECK(b.samples.size() == 6);
    for (const auto& s : b.samples) {
      CHECK(s.clean.sizes() == torch::IntArrayRef({1, 16, 16}));
      CHECK(s.degraded.sizes() == s.clean.sizes());
    }
    auto c = build_component_dataset(split.pairs, ComponentKind::kChroma, cfg, 1);
    CHECK(c.samples.size() == 3);
    CHECK(c.samples[0].clean.size(0) == 2);
    auto again = build_component_dataset(split.pairs, ComponentKind::kChroma, cfg, 1);
    CHECK(testing::bit_equal(again.samples[2].degraded, c.samples[2].degraded));

    cfg.identity_fraction = 1.0;
    auto ident = build_component_dataset(split.pairs, ComponentKind::kBrightness, cfg, 1);
    for (const auto& s : ident.samples) CHECK(testing::bit_equal(s.clean, s.degraded));

    std::vector<ModalPair> gray{{"g", Image(torch::rand({1, 16, 16})), Image(torch::rand({1, 16, 16}))}};
    CHECK_THROWS_AS(build_component_dataset(gray, ComponentKind::kChroma, cfg, 1), ValidationError);
    CHECK_THROWS_AS(build_component_dataset({}, ComponentKind::kBrightness, cfg, 1), ValidationError);
    CHECK_THROWS_AS(parse_component("alpha"), ValidationError);
    CHECK(latent_channels(parse_component("chroma")) == 2);
  }

  TEST_CASE("fusion datasets carry masks when given") {
    auto split = synthetic_split(2, 16, 6);
    DegradationSection cfg;
    auto with = build_fusion_dataset(split.pairs, split.masks, cfg, 3);
    REQUIRE(with.size() == 2);
    CHECK(with[0].mask.sizes() == torch::IntArrayRef({1, 16, 16}));
    CHECK(with[0].xb_clean.sizes() == torch::IntArrayRef({1, 16, 16}));
    auto without = build_fusion_dataset(split.pairs, {}, cfg, 3);
    CHECK_FALSE(without[0].mask.defined());
    CHECK(testing::bit_equal(without[1].y_degraded, with[1].y_degraded));
    CHECK_THROWS_AS(build_fusion_dataset(split.pairs, {split.masks[0]}, cfg, 3), ValidationError);
  }
}
