#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cgsa/synthbench.hpp"

using namespace cgsa;

TEST_CASE("null shift: target is pixel-identical to source for the same seed") {
  SceneConfig cfg;
  cfg.fog_alpha = 0.0;
  cfg.noise_sigma = 0.0;
  cfg.hue_jitter_deg = 0.0;
  for (std::uint64_t seed : {1ull, 7ull, 99ull}) {
    Scene src = generate_scene(seed, Domain::Source, cfg);
    Scene tgt = generate_scene(seed, Domain::Target, cfg);
    CHECK(src.image.rgb == tgt.image.rgb);
  }
}

TEST_CASE("domain shift preserves annotations for equal seeds") {
  SceneConfig cfg;  // full shift
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Scene src = generate_scene(seed, Domain::Source, cfg);
    Scene tgt = generate_scene(seed, Domain::Target, cfg);
    REQUIRE(src.ground_truth.size() == tgt.ground_truth.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < src.ground_truth.size(); ++i) {
      CHECK(src.ground_truth[i].class_id == tgt.ground_truth[i].class_id);
      CHECK(src.ground_truth[i].box.cx == tgt.ground_truth[i].box.cx);
      CHECK(src.ground_truth[i].box.cy == tgt.ground_truth[i].box.cy);
      CHECK(src.ground_truth[i].box.w == tgt.ground_truth[i].box.w);
      CHECK(src.ground_truth[i].box.h == tgt.ground_truth[i].box.h);
    }
    if (src.image.rgb != tgt.image.rgb) any_diff = true;
    CHECK(any_diff);  // shift affects pixels only, but it does affect them
  }
}

TEST_CASE("object count, size and placement invariants over many seeds") {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    Scene s = generate_scene(seed, Domain::Source, cfg);
    CHECK(s.ground_truth.size() >= cfg.min_objects);
    CHECK(s.ground_truth.size() <= cfg.max_objects);
    for (const auto& t : s.ground_truth) {
      CHECK(t.class_id >= 1);
      CHECK(t.class_id <= 3);
      // No object smaller than 4x4 pixels; boxes inside the image.
      CHECK(t.box.w * cfg.image_size >= 4.0);
      CHECK(t.box.h * cfg.image_size >= 4.0);
      CHECK(t.box.x1() >= 0.0);
      CHECK(t.box.y1() >= 0.0);
      CHECK(t.box.x2() <= 1.0);
      CHECK(t.box.y2() <= 1.0);
    }
  }
}

TEST_CASE("single-class config produces circles only") {
  SceneConfig cfg;
  cfg.single_class = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Scene s = generate_scene(seed, Domain::Target, cfg);
    for (const auto& t : s.ground_truth) CHECK(t.class_id == kClassCircle);
  }
}

TEST_CASE("iou reference cases") {
  Box a{0.5, 0.5, 0.2, 0.2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  Box b{0.1, 0.1, 0.1, 0.1};
  Box c{0.9, 0.9, 0.1, 0.1};
  CHECK(iou(b, c) == doctest::Approx(0.0));
  // Unit squares offset by half their width: intersection 1/2, union 3/2.
  Box u1{0.5, 0.5, 1.0, 1.0};
  Box u2{1.0, 0.5, 1.0, 1.0};
  CHECK(iou(u1, u2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  Box degenerate{0.5, 0.5, 0.0, 0.2};
  CHECK_THROWS(iou(a, degenerate));
}

namespace {
std::vector<std::vector<Detection>> as_perfect_detections(
    const std::vector<std::vector<Target>>& gt) {
  std::vector<std::vector<Detection>> out(gt.size());
  for (std::size_t s = 0; s < gt.size(); ++s)
    for (const auto& t : gt[s]) out[s].push_back({t.box, t.class_id, 1.0});
  return out;
}
}  // namespace

TEST_CASE("evaluate: perfect detections give AP = F1 = 1") {
  SceneConfig cfg;
  std::vector<std::vector<Target>> gt;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    gt.push_back(generate_scene(seed, Domain::Source, cfg).ground_truth);
  auto res = evaluate(as_perfect_detections(gt), gt, 3);
  CHECK(res.mean_ap == doctest::Approx(1.0));
  CHECK(res.f1 == doctest::Approx(1.0));
  CHECK(res.fn == 0);
  CHECK(res.fp == 0);
  CHECK(!res.degenerate);
}

TEST_CASE("evaluate: no detections give zero scores and FN = |GT|") {
  SceneConfig cfg;
  std::vector<std::vector<Target>> gt;
  std::size_t total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    gt.push_back(generate_scene(seed, Domain::Source, cfg).ground_truth);
    total += gt.back().size();
  }
  std::vector<std::vector<Detection>> none(gt.size());
  auto res = evaluate(none, gt, 3);
  CHECK(res.mean_ap == doctest::Approx(0.0));
  CHECK(res.f1 == doctest::Approx(0.0));
  CHECK(res.fn == total);
  CHECK(res.tp == 0);
}

TEST_CASE("evaluate: one TP and one FP give precision 1/2, recall 1, F1 2/3") {
  std::vector<std::vector<Target>> gt(1);
  gt[0].push_back({Box{0.3, 0.3, 0.2, 0.2}, 1});
  std::vector<std::vector<Detection>> dets(1);
  dets[0].push_back({Box{0.3, 0.3, 0.2, 0.2}, 1, 0.9});  // TP
  dets[0].push_back({Box{0.8, 0.8, 0.1, 0.1}, 1, 0.8});  // FP
  auto res = evaluate(dets, gt, 3);
  CHECK(res.tp == 1);
  CHECK(res.fp == 1);
  CHECK(res.fn == 0);
  CHECK(res.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("evaluate: empty ground truth and detections is perfect but flagged") {
  std::vector<std::vector<Target>> gt(3);
  std::vector<std::vector<Detection>> dets(3);
  auto res = evaluate(dets, gt, 3);
  CHECK(res.degenerate);
  CHECK(res.mean_ap == doctest::Approx(1.0));
  CHECK(res.f1 == doctest::Approx(1.0));
}

TEST_CASE("evaluate is invariant to detection order") {
  SceneConfig cfg;
  Rng rng(5);
  std::vector<std::vector<Target>> gt;
  std::vector<std::vector<Detection>> dets;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Scene s = generate_scene(seed, Domain::Source, cfg);
    gt.push_back(s.ground_truth);
    std::vector<Detection> d;
    for (const auto& t : s.ground_truth) {
      // Perturbed detections with varied confidence.
      Box b = t.box;
      b.cx = std::clamp(b.cx + rng.uniform(-0.02, 0.02), 0.05, 0.95);
      d.push_back({b, t.class_id, rng.uniform(0.3, 1.0)});
      if (rng.uniform() < 0.5)
        d.push_back({Box{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.1},
                     1 + static_cast<int>(rng.uniform_index(3)),
                     rng.uniform(0.3, 1.0)});
    }
    dets.push_back(d);
  }
  auto res1 = evaluate(dets, gt, 3);
  for (auto& d : dets) std::reverse(d.begin(), d.end());
  auto res2 = evaluate(dets, gt, 3);
  CHECK(res1.mean_ap == doctest::Approx(res2.mean_ap).epsilon(1e-15));
  CHECK(res1.f1 == doctest::Approx(res2.f1).epsilon(1e-15));
  CHECK(res1.tp == res2.tp);
}

TEST_CASE("AP never increases when detections are deleted") {
  SceneConfig cfg;
  Rng rng(17);
  std::vector<std::vector<Target>> gt;
  std::vector<std::vector<Detection>> dets;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Scene s = generate_scene(seed, Domain::Source, cfg);
    gt.push_back(s.ground_truth);
    std::vector<Detection> d;
    for (const auto& t : s.ground_truth)
      if (rng.uniform() < 0.8) d.push_back({t.box, t.class_id, rng.uniform(0.4, 1.0)});
    dets.push_back(d);
  }
  double base = evaluate(dets, gt, 3).mean_ap;
  // Delete detections one scene at a time; mAP must not increase.
  for (int round = 0; round < 5; ++round) {
    for (auto& d : dets)
      if (!d.empty() && rng.uniform() < 0.5) d.pop_back();
    double now = evaluate(dets, gt, 3).mean_ap;
    CHECK(now <= base + 1e-12);
    base = now;
  }
}

TEST_CASE("dataset write/read round trip is lossless") {
  SceneConfig cfg;
  std::vector<Scene> scenes;
  for (std::uint64_t seed = 0; seed < 6; ++seed)
    scenes.push_back(generate_scene(seed, Domain::Target, cfg));
  std::string dir = "synthbench_roundtrip_tmp";
  write_dataset(dir, scenes);
  auto loaded = read_dataset(dir);
  REQUIRE(loaded.size() == scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    CHECK(loaded[i].image.rgb == scenes[i].image.rgb);
    REQUIRE(loaded[i].ground_truth.size() == scenes[i].ground_truth.size());
    for (std::size_t j = 0; j < scenes[i].ground_truth.size(); ++j) {
      CHECK(loaded[i].ground_truth[j].class_id ==
            scenes[i].ground_truth[j].class_id);
      CHECK(loaded[i].ground_truth[j].box.cx == scenes[i].ground_truth[j].box.cx);
      CHECK(loaded[i].ground_truth[j].box.w == scenes[i].ground_truth[j].box.w);
    }
  }
  std::filesystem::remove_all(dir);
}
