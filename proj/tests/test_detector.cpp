#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cgsa/detector.hpp"
#include "cgsa/numeric.hpp"
#include "grad_check.hpp"

using namespace cgsa;

namespace {

ImageU8 solid_image(std::size_t size, std::uint8_t r, std::uint8_t g,
                    std::uint8_t b) {
  ImageU8 img;
  img.height = img.width = size;
  img.rgb.resize(size * size * 3);
  for (std::size_t i = 0; i < size * size; ++i) {
    img.rgb[i * 3] = r;
    img.rgb[i * 3 + 1] = g;
    img.rgb[i * 3 + 2] = b;
  }
  return img;
}

QuerySetVars manual_queries(Tape& tape, const Tensor& logits,
                            const Tensor& boxes) {
  QuerySetVars qs;
  qs.logits = tape.leaf(logits, true);
  qs.probs = tape.softmax_rows(qs.logits);
  qs.boxes = tape.leaf(boxes, true);
  qs.queries = qs.boxes;  // unused by the loss
  qs.m = logits.rows();
  qs.num_classes = logits.cols() - 1;
  return qs;
}

}  // namespace

TEST_CASE("encode_image: 64x64 with patch 8 gives 64 tokens") {
  DetectorConfig cfg;
  Detector det(cfg);
  ParameterStore store;
  Rng rng(3);
  det.register_params(store, rng);
  Tape tape;
  auto p = store.bind(tape);
  auto fm = det.encode_image(tape, p, solid_image(64, 100, 50, 25));
  CHECK(fm.n_tokens == 64);
  CHECK(fm.grid_h == 8);
  CHECK(fm.grid_w == 8);
  CHECK(tape.value(fm.tokens).rows() == 64);
  CHECK(tape.value(fm.tokens).cols() == cfg.dim);
}

TEST_CASE("encode_image: all-zero image with zero bias gives zero tokens") {
  DetectorConfig cfg;
  Detector det(cfg);
  ParameterStore store;
  Rng rng(3);
  det.register_params(store, rng);
  store.get("det.patch.b") = Tensor(1, cfg.dim, 0.0);
  Tape tape;
  auto p = store.bind(tape);
  auto fm = det.encode_image(tape, p, solid_image(64, 0, 0, 0));
  for (double v : tape.value(fm.tokens).data) CHECK(v == 0.0);
}

TEST_CASE("encode_image: single-patch case matches the direct matrix product") {
  DetectorConfig cfg;
  cfg.image_size = 8;
  cfg.patch = 8;
  cfg.dim = 4;
  Detector det(cfg);
  ParameterStore store;
  Rng rng(5);
  det.register_params(store, rng);
  ImageU8 img = solid_image(8, 0, 0, 0);
  Rng pix(9);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(pix.uniform_index(256));
  Tape tape;
  auto p = store.bind(tape);
  auto fm = det.encode_image(tape, p, img);
  const Tensor& w = store.get("det.patch.w");
  const Tensor& b = store.get("det.patch.b");
  for (std::size_t j = 0; j < cfg.dim; ++j) {
    double want = b.at(0, j);
    std::size_t idx = 0;
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          want += img.at(y, x, c) / 255.0 * w.at(idx, j);
          ++idx;
        }
    CHECK(tape.value(fm.tokens).at(0, j) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("detect: output shapes are M x (C+1) and M x 4") {
  DetectorConfig cfg;
  Detector det(cfg);
  ParameterStore store;
  Rng rng(7);
  det.register_params(store, rng);
  Tape tape;
  auto p = store.bind(tape);
  auto fm = det.encode_image(tape, p, solid_image(64, 10, 200, 30));
  auto qs = det.detect(tape, p, fm, det.object_queries(p));
  CHECK(tape.value(qs.logits).rows() == cfg.num_queries);
  CHECK(tape.value(qs.logits).cols() == cfg.num_classes + 1);
  CHECK(tape.value(qs.boxes).rows() == cfg.num_queries);
  CHECK(tape.value(qs.boxes).cols() == 4);
  for (double v : tape.value(qs.boxes).data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("detect: degenerate attention and FFN leave heads on the queries") {
  DetectorConfig cfg;
  Detector det(cfg);
  ParameterStore store;
  Rng rng(11);
  det.register_params(store, rng);
  store.get("det.attn.w_o") = Tensor(cfg.dim, cfg.dim, 0.0);
  store.get("det.ffn.w2") = Tensor(2 * cfg.dim, cfg.dim, 0.0);
  store.get("det.ffn.b2") = Tensor(1, cfg.dim, 0.0);
  Tape tape;
  auto p = store.bind(tape);
  auto fm = det.encode_image(tape, p, solid_image(64, 90, 90, 90));
  auto qs = det.detect(tape, p, fm, det.object_queries(p));

  const Tensor& q = store.get("det.q_obj");
  const Tensor& wc = store.get("det.cls.w");
  const Tensor& bc = store.get("det.cls.b");
  for (std::size_t i = 0; i < cfg.num_queries; ++i)
    for (std::size_t j = 0; j <= cfg.num_classes; ++j) {
      double want = bc.at(0, j);
      for (std::size_t l = 0; l < cfg.dim; ++l) want += q.at(i, l) * wc.at(l, j);
      CHECK(tape.value(qs.logits).at(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("detect: d_q=2, M=1, N=1 straight-line oracle") {
  DetectorConfig cfg;
  cfg.image_size = 8;
  cfg.patch = 8;
  cfg.dim = 2;
  cfg.num_queries = 1;
  cfg.num_classes = 2;
  Detector det(cfg);
  ParameterStore store;
  Rng rng(13);
  det.register_params(store, rng);
  ImageU8 img = solid_image(8, 120, 60, 240);
  Tape tape;
  auto p = store.bind(tape);
  auto fm = det.encode_image(tape, p, img);
  auto qs = det.detect(tape, p, fm, det.object_queries(p));

  // One query over one token: attention is exactly 1, the context is the
  // projected token plus the projected positional code (0, 1, 0, 1).
  const Tensor& tok = tape.value(fm.tokens);
  const Tensor& wv = store.get("det.attn.w_v");
  const Tensor& wvp = store.get("det.attn.w_vpos");
  const Tensor& wo = store.get("det.attn.w_o");
  const Tensor& q0 = store.get("det.q_obj");
  double v0 = tok.at(0, 0) * wv.at(0, 0) + tok.at(0, 1) * wv.at(1, 0) +
              wvp.at(1, 0) + wvp.at(3, 0);
  double v1 = tok.at(0, 0) * wv.at(0, 1) + tok.at(0, 1) * wv.at(1, 1) +
              wvp.at(1, 1) + wvp.at(3, 1);
  double x1_0 = q0.at(0, 0) + v0 * wo.at(0, 0) + v1 * wo.at(1, 0);
  double x1_1 = q0.at(0, 1) + v0 * wo.at(0, 1) + v1 * wo.at(1, 1);
  const Tensor& w1 = store.get("det.ffn.w1");
  const Tensor& b1 = store.get("det.ffn.b1");
  const Tensor& w2 = store.get("det.ffn.w2");
  const Tensor& b2 = store.get("det.ffn.b2");
  double h[4];
  for (int j = 0; j < 4; ++j)
    h[j] = std::tanh(b1.at(0, j) + x1_0 * w1.at(0, j) + x1_1 * w1.at(1, j));
  double x2_0 = x1_0 + b2.at(0, 0), x2_1 = x1_1 + b2.at(0, 1);
  for (int j = 0; j < 4; ++j) {
    x2_0 += h[j] * w2.at(j, 0);
    x2_1 += h[j] * w2.at(j, 1);
  }
  const Tensor& wb = store.get("det.box.w");
  const Tensor& bb = store.get("det.box.b");
  for (int j = 0; j < 4; ++j) {
    double z = bb.at(0, j) + x2_0 * wb.at(0, j) + x2_1 * wb.at(1, j);
    CHECK(tape.value(qs.boxes).at(0, j) ==
          doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
  }
}

TEST_CASE("focal term reference value at p = 0.5") {
  CHECK(focal_term(0.5, 0.25, 2.0) ==
        doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
  CHECK(focal_term(0.5, 0.25, 2.0) == doctest::Approx(0.04332).epsilon(1e-3));
}

TEST_CASE("detection_loss: perfect match has vanishing class and box terms") {
  Tape tape;
  Tensor logits = Tensor::matrix(1, 2, {50.0, -50.0});
  Tensor boxes = Tensor::matrix(1, 4, {0.5, 0.5, 0.2, 0.3});
  auto qs = manual_queries(tape, logits, boxes);
  std::vector<Target> targets{{Box{0.5, 0.5, 0.2, 0.3}, 1}};
  auto res = detection_loss(tape, qs, targets);
  CHECK(!res.background_only);
  CHECK(res.matched_query[0] == 0);
  CHECK(tape.scalar(res.loss) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("detection_loss: single query/target decomposition oracle") {
  Tape tape;
  Tensor logits = Tensor::matrix(1, 3, {0.7, -0.3, 0.1});
  Tensor boxes = Tensor::matrix(1, 4, {0.4, 0.45, 0.25, 0.2});
  auto qs = manual_queries(tape, logits, boxes);
  Box target_box{0.5, 0.5, 0.3, 0.3};
  std::vector<Target> targets{{target_box, 2}};
  auto res = detection_loss(tape, qs, targets, 5.0, 2.0);

  auto probs = softmax({0.7, -0.3, 0.1});
  Box pred{0.4, 0.45, 0.25, 0.2};
  double want = focal_term(probs[1], 0.25, 2.0) +
                5.0 * l1_distance(pred, target_box) +
                2.0 * (1.0 - giou(pred, target_box));
  CHECK(tape.scalar(res.loss) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("detection_loss: focal value at p=0.5 shows up for a matched query") {
  Tape tape;
  Tensor logits = Tensor::matrix(1, 2, {0.0, 0.0});
  Tensor boxes = Tensor::matrix(1, 4, {0.5, 0.5, 0.2, 0.2});
  auto qs = manual_queries(tape, logits, boxes);
  std::vector<Target> targets{{Box{0.5, 0.5, 0.2, 0.2}, 1}};
  auto res = detection_loss(tape, qs, targets);
  CHECK(tape.scalar(res.loss) ==
        doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("detection_loss: empty targets fall back to background-only") {
  Tape tape;
  Tensor logits = Tensor::matrix(2, 3, {0.2, -0.1, 0.4, 0.0, 0.3, -0.2});
  Tensor boxes(2, 4, 0.4);
  auto qs = manual_queries(tape, logits, boxes);
  auto res = detection_loss(tape, qs, {});
  CHECK(res.background_only);
  auto p0 = softmax({0.2, -0.1, 0.4});
  auto p1 = softmax({0.0, 0.3, -0.2});
  double want = focal_term(p0[2], 0.75, 2.0) + focal_term(p1[2], 0.75, 2.0);
  CHECK(tape.scalar(res.loss) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("detection_loss is invariant to target order") {
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor logits = cgsa_test::random_tensor(rng, 5, 4);
    Tensor boxes = cgsa_test::random_tensor(rng, 5, 4, 0.2, 0.8);
    std::vector<Target> targets{
        {Box{rng.uniform(0.2, 0.4), rng.uniform(0.2, 0.4), 0.2, 0.2}, 1},
        {Box{rng.uniform(0.6, 0.8), rng.uniform(0.6, 0.8), 0.15, 0.25}, 2},
        {Box{rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6), 0.3, 0.1}, 3},
    };
    Tape t1;
    auto q1 = manual_queries(t1, logits, boxes);
    double a = t1.scalar(detection_loss(t1, q1, targets).loss);
    std::vector<Target> shuffled{targets[2], targets[0], targets[1]};
    Tape t2;
    auto q2 = manual_queries(t2, logits, boxes);
    double b = t2.scalar(detection_loss(t2, q2, shuffled).loss);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("giou range, identity and containment behavior") {
  Box a{0.5, 0.5, 0.2, 0.2};
  CHECK(giou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, a) == doctest::Approx(1.0));
  Box far{0.1, 0.1, 0.05, 0.05};
  CHECK(giou(a, far) < 0.0);
  CHECK(giou(a, far) > -1.0);
  // When one box contains the other, the hull is the outer box and GIoU
  // equals IoU.
  Box inner{0.5, 0.5, 0.1, 0.1};
  CHECK(giou(a, inner) == doctest::Approx(iou(a, inner)).epsilon(1e-12));
  Rng rng(23);
  for (int rep = 0; rep < 200; ++rep) {
    Box p{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4),
          rng.uniform(0.05, 0.4)};
    Box q{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4),
          rng.uniform(0.05, 0.4)};
    double g = giou(p, q);
    CHECK(g > -1.0);
    CHECK(g <= 1.0);
    CHECK(1.0 - g >= 0.0);
    CHECK(l1_distance(p, q) >= 0.0);
  }
  CHECK(l1_distance(a, a) == 0.0);
  Box degenerate{0.5, 0.5, 0.0, 0.1};
  CHECK_THROWS(iou(a, degenerate));
}

TEST_CASE("query summaries expose confidence and background flags") {
  Tape tape;
  Tensor logits = Tensor::matrix(2, 4, {0.1, 3.0, 0.2, 0.5,
                                        0.0, 0.1, -0.2, 4.0});
  Tensor boxes(2, 4, 0.5);
  auto qs = manual_queries(tape, logits, boxes);
  auto info = summarize_queries(tape, qs);
  CHECK(info[0].fg_class == 2);
  CHECK(!info[0].background);
  CHECK(info[1].background);
  auto p0 = softmax({0.1, 3.0, 0.2, 0.5});
  CHECK(info[0].fg_prob == doctest::Approx(p0[1]));
  auto dets = extract_detections(tape, qs);
  CHECK(dets.size() == 2);
  CHECK(dets[0].class_id == 2);
  CHECK(dets[0].confidence == doctest::Approx(p0[1]));
}

TEST_CASE("detection_loss gradients match finite differences through the heads") {
  DetectorConfig cfg;
  cfg.image_size = 16;
  cfg.patch = 8;
  cfg.dim = 3;
  cfg.num_queries = 3;
  cfg.num_classes = 2;
  Detector det(cfg);
  ParameterStore store;
  Rng rng(31);
  det.register_params(store, rng);
  ImageU8 img;
  img.height = img.width = 16;
  img.rgb.resize(16 * 16 * 3);
  Rng pix(37);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(pix.uniform_index(256));
  std::vector<Target> targets{{Box{0.3, 0.3, 0.25, 0.25}, 1},
                              {Box{0.7, 0.7, 0.2, 0.3}, 2}};

  auto names = store.names();
  std::vector<Tensor> inputs;
  for (const auto& nm : names) inputs.push_back(store.get(nm));
  auto build = [&](Tape& t, const std::vector<Var>& vars) {
    std::map<std::string, Var> p;
    for (std::size_t i = 0; i < names.size(); ++i) p[names[i]] = vars[i];
    Detector d2(cfg);
    auto fm = d2.encode_image(t, p, img);
    auto qs = d2.detect(t, p, fm, d2.object_queries(p));
    return detection_loss(t, qs, targets).loss;
  };
  auto res = cgsa_test::check_gradients(build, inputs, 1e-4, 1e-4);
  INFO("max err ", res.max_err, " over ", res.coords, " coordinates");
  CHECK(res.pass);
}
