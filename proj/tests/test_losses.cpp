#include "test_util.hpp"

#include <cmath>

#include "stegotag/color.hpp"
#include "stegotag/losses.hpp"
#include "stegotag/nets.hpp"

using namespace stegotag;

namespace {

NetScale tiny() {
  NetScale s;
  s.image_size = 64;
  s.corner_crop = 32;
  s.encoder_base = 4;
  s.encoder_depth = 2;
  s.region_channels = {4, 8, 8, 8, 8};
  s.corner_base = 4;
  s.corner_depth = 2;
  s.decoder_channels = {4, 8};
  s.decoder_fc = 32;
  s.adversary_channels = {4, 8};
  s.reverse_base = 4;
  s.reverse_depth = 2;
  return s;
}

// Scalar-loop pixel loss oracle with inline BT.601 constants.
double pixel_loss_oracle(const torch::Tensor& code, const torch::Tensor& cover) {
  auto c = code.to(torch::kFloat64);
  auto v = cover.to(torch::kFloat64);
  const int64_t b = c.size(0), h = c.size(2), w = c.size(3);
  double sum[3] = {0, 0, 0};
  for (int64_t n = 0; n < b; ++n) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        double r1 = c[n][0][y][x].item<double>(), g1 = c[n][1][y][x].item<double>(),
               b1 = c[n][2][y][x].item<double>();
        double r2 = v[n][0][y][x].item<double>(), g2 = v[n][1][y][x].item<double>(),
               b2 = v[n][2][y][x].item<double>();
        double dy = (0.299 * r1 + 0.587 * g1 + 0.114 * b1) -
                    (0.299 * r2 + 0.587 * g2 + 0.114 * b2);
        double du = (-0.14713 * r1 - 0.28886 * g1 + 0.436 * b1) -
                    (-0.14713 * r2 - 0.28886 * g2 + 0.436 * b2);
        double dv = (0.615 * r1 - 0.51499 * g1 - 0.10001 * b1) -
                    (0.615 * r2 - 0.51499 * g2 - 0.10001 * b2);
        sum[0] += dy * dy;
        sum[1] += du * du;
        sum[2] += dv * dv;
      }
    }
  }
  const double n = static_cast<double>(b * h * w);
  return 2.0 * sum[0] / n + sum[1] / n + sum[2] / n;
}

// Shift only the U plane of an RGB image by delta.
torch::Tensor shift_u(const torch::Tensor& rgb, double delta) {
  auto yuv = rgb_to_yuv(rgb);
  yuv.slice(1, 1, 2) += delta;
  return yuv_to_rgb(yuv);
}

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("weight presets and validation") {
  LossWeights::phase1().validate();
  LossWeights::phase2(100.0).validate();
  auto p1 = LossWeights::phase1();
  CHECK(p1.w_i == 0.0);
  CHECK(p1.w_m == 0.0);
  CHECK(p1.w_a == 0.0);
  CHECK(p1.w_k == 1.0e5);
  auto p2 = LossWeights::phase2(47.0);
  CHECK(p2.w_i == 47.0);
  CHECK(p2.w_m == 10.0);
  CHECK(p2.w_a == 0.001);
  LossWeights bad;
  bad.w_c = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("image loss vanishes on identical images") {
  auto metric = PerceptualMetric::random_init(11);
  auto img = torch::rand({2, 3, 32, 32});
  auto parts = image_loss(img, img, metric);
  CHECK(parts.pixel.item<double>() == 0.0);
  CHECK(parts.chroma.item<double>() == 0.0);
  CHECK(parts.lpips.item<double>() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(parts.total.item<double>() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("chroma loss grows with a uniform U shift") {
  torch::manual_seed(21);
  auto cover = (torch::rand({1, 3, 32, 32}) * 0.4 + 0.3).to(torch::kFloat64);
  auto metric = PerceptualMetric::disabled();
  double prev = 0.0;
  for (double delta : {0.02, 0.05, 0.1}) {
    auto parts = image_loss(shift_u(cover, delta), cover, metric);
    double chroma = parts.chroma.item<double>();
    CHECK(chroma > prev);
    prev = chroma;
    // Pixel term sees the same shift: weight 1 on U, so ~= delta^2.
    CHECK(parts.pixel.item<double>() ==
          doctest::Approx(delta * delta).epsilon(1e-4));
  }
}

TEST_CASE("image loss matches the scalar oracle and the 0.01 lpips weight") {
  torch::manual_seed(22);
  auto code = torch::rand({2, 3, 8, 8});
  auto cover = torch::rand({2, 3, 8, 8});
  auto metric = PerceptualMetric::random_init(5);
  auto parts = image_loss(code, cover, metric);
  CHECK(parts.pixel.item<double>() ==
        doctest::Approx(pixel_loss_oracle(code, cover)).epsilon(1e-5));
  CHECK(parts.lpips.item<double>() > 0.0);
  double recomposed = parts.pixel.item<double>() + parts.chroma.item<double>() +
                      0.01 * parts.lpips.item<double>();
  CHECK(parts.total.item<double>() == doctest::Approx(recomposed).epsilon(1e-6));

  auto off = image_loss(code, cover, PerceptualMetric::disabled());
  CHECK(off.lpips.item<double>() == 0.0);

  CHECK_THROWS_AS(image_loss(code, torch::rand({2, 3, 9, 9}), metric),
                  ContractError);
}

TEST_CASE("perceptual metric is a frozen deterministic pseudo-distance") {
  auto m1 = PerceptualMetric::random_init(3);
  auto m2 = PerceptualMetric::random_init(3);
  torch::manual_seed(23);
  auto a = torch::rand({1, 3, 32, 32});
  auto b = torch::rand({1, 3, 32, 32});
  CHECK(m1(a, b).item<double>() == m2(a, b).item<double>());
  CHECK(m1(a, b).item<double>() > 0.0);
  CHECK(m1(a, a).item<double>() == 0.0);

  // Gradients reach the input, never the metric's own weights.
  auto x = a.clone().set_requires_grad(true);
  m1(x, b).backward();
  CHECK(x.grad().abs().sum().item<double>() > 0.0);

  testutil::TempDir tmp("lpips_file");
  m1.save(tmp.path() / "metric.weights");
  auto m3 = PerceptualMetric::from_file(tmp.path() / "metric.weights");
  CHECK(m3(a, b).item<double>() == m1(a, b).item<double>());

  CHECK_FALSE(PerceptualMetric::disabled().enabled());
  CHECK(PerceptualMetric::disabled()(a, b).item<double>() == 0.0);
}

TEST_CASE("anchor matching: best-match guarantee and IoU threshold") {
  // A box exactly on an anchor.
  auto anchors = AnchorGrid::boxes();
  auto gt = anchors.index({torch::tensor({int64_t(100)})}).clone();
  auto [labels, matched] = match_anchors(gt);
  CHECK(labels[100].item<int64_t>() == 1);
  CHECK(matched[100].item<int64_t>() == 0);
  CHECK(labels.sum().item<int64_t>() >= 1);

  // A box too small to reach IoU 0.5 with any anchor still gets its best.
  auto odd = torch::tensor({{150.0f, 150.0f, 5.0f}});
  auto [l2, m2] = match_anchors(odd);
  CHECK(l2.sum().item<int64_t>() == 1);

  auto [l3, m3] = match_anchors(torch::zeros({0, 3}));
  CHECK(l3.sum().item<int64_t>() == 0);
  (void)m2;
  (void)m3;
}

TEST_CASE("detection loss: perfect predictions, empty scenes, random init") {
  auto anchors = AnchorGrid::boxes();
  auto gt = torch::tensor({{60.0f, 80.0f, 34.0f}, {200.0f, 150.0f, 62.0f}});
  auto [labels, matched] = match_anchors(gt);

  RegionOutput perfect;
  perfect.offsets = torch::zeros({1, AnchorGrid::count(), 3});
  perfect.logits = torch::zeros({1, AnchorGrid::count(), 2});
  auto pos_idx = (labels == 1).nonzero().squeeze(1);
  auto targets = AnchorGrid::encode(gt.index({matched.index({pos_idx})}),
                                    anchors.index({pos_idx}));
  perfect.offsets[0].index_put_({pos_idx}, targets);
  // Confident correct classification everywhere.
  perfect.logits.select(2, 0).fill_(10.0f);
  perfect.logits[0].index_put_(
      {pos_idx}, torch::tensor({-10.0f, 10.0f}).expand({pos_idx.size(0), 2}));

  auto parts = detection_loss(perfect, {gt});
  CHECK(parts.regression.item<double>() == 0.0);
  // f32 cross entropy bottoms out around 1e-4 here: mining picks the largest
  // rounding residues among 2005 anchors. Chance level would be ln 2.
  CHECK(parts.classification.item<double>() < 1e-3);

  // Empty scene with confident background predictions.
  RegionOutput empty;
  empty.offsets = torch::zeros({1, AnchorGrid::count(), 3});
  empty.logits = torch::zeros({1, AnchorGrid::count(), 2});
  empty.logits.select(2, 0).fill_(12.0f);
  auto eparts = detection_loss(empty, {torch::zeros({0, 3})});
  CHECK(eparts.regression.item<double>() == 0.0);
  CHECK(eparts.classification.item<double>() < 1e-4);
  // But unconfident empty-scene predictions are penalized.
  RegionOutput flat;
  flat.offsets = torch::zeros({1, AnchorGrid::count(), 3});
  flat.logits = torch::zeros({1, AnchorGrid::count(), 2});
  auto fparts = detection_loss(flat, {torch::zeros({0, 3})});
  CHECK(fparts.classification.item<double>() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  // Random predictions on a 4-code scene: finite and positive.
  torch::manual_seed(31);
  RegionOutput rando;
  rando.offsets = torch::randn({2, AnchorGrid::count(), 3});
  rando.logits = torch::randn({2, AnchorGrid::count(), 2});
  auto gt4 = torch::tensor({{50.0f, 50.0f, 40.0f},
                            {250.0f, 60.0f, 55.0f},
                            {80.0f, 240.0f, 90.0f},
                            {220.0f, 220.0f, 36.0f}});
  auto rparts = detection_loss(rando, {gt4, torch::zeros({0, 3})});
  CHECK(std::isfinite(rparts.regression.item<double>()));
  CHECK(std::isfinite(rparts.classification.item<double>()));
  CHECK(rparts.regression.item<double>() > 0.0);
  CHECK(rparts.classification.item<double>() > 0.0);

  CHECK_THROWS_AS(detection_loss(rando, {gt4}), ContractError);
}

TEST_CASE("keypoint loss analytic values and oracle equivalence") {
  auto gt = torch::rand({3, 8}, torch::kFloat64);
  CHECK(keypoint_loss(gt, gt).item<double>() == 0.0);

  const double eps = 0.013;
  auto shifted = gt + eps;
  CHECK(keypoint_loss(shifted, gt).item<double>() ==
        doctest::Approx(2 * eps * eps).epsilon(1e-12));

  torch::manual_seed(41);
  auto pred = torch::rand({5, 8}, torch::kFloat64);
  auto target = torch::rand({5, 8}, torch::kFloat64);
  // Oracle: mean over corners of squared Euclidean distance.
  double acc = 0.0;
  for (int b = 0; b < 5; ++b) {
    for (int c = 0; c < 4; ++c) {
      double dx = pred[b][2 * c].item<double>() - target[b][2 * c].item<double>();
      double dy =
          pred[b][2 * c + 1].item<double>() - target[b][2 * c + 1].item<double>();
      acc += dx * dx + dy * dy;
    }
  }
  acc /= 20.0;
  CHECK(std::abs(keypoint_loss(pred, target).item<double>() - acc) < 1e-9);
  CHECK_THROWS_AS(keypoint_loss(pred, torch::rand({5, 9}, torch::kFloat64)),
                  ContractError);
}

TEST_CASE("message loss analytic values and oracle equivalence") {
  auto bits = torch::randint(0, 2, {4, 36}).to(torch::kFloat64);
  // Saturated-correct logits.
  auto logits = (bits * 2.0 - 1.0) * 30.0;
  CHECK(message_loss(logits, bits).item<double>() < 1e-9);
  // All outputs at 0.5.
  CHECK(message_loss(torch::zeros({4, 36}, torch::kFloat64), bits).item<double>() ==
        doctest::Approx(0.25).epsilon(1e-12));

  torch::manual_seed(51);
  auto raw = torch::randn({4, 36}, torch::kFloat64);
  double acc = 0.0;
  for (int b = 0; b < 4; ++b) {
    for (int i = 0; i < 36; ++i) {
      double s = 1.0 / (1.0 + std::exp(-raw[b][i].item<double>()));
      double d = s - bits[b][i].item<double>();
      acc += d * d;
    }
  }
  acc /= 4.0 * 36.0;
  CHECK(std::abs(message_loss(raw, bits).item<double>() - acc) < 1e-9);
}

TEST_CASE("adversary losses hit their analytic values") {
  torch::manual_seed(61);
  AdversaryNet adv(tiny());
  {
    torch::NoGradGuard guard;
    adv->fc->weight.zero_();
    adv->fc->bias.zero_();  // logit exactly 0 -> belief exactly 0.5
  }
  auto codes = torch::rand({3, 3, 64, 64});
  auto covers = torch::rand({3, 3, 64, 64});
  CHECK(adversary_loss_for_encoder(adv, codes).item<double>() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(adversary_own_loss(adv, codes, covers).item<double>() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-6));

  // Perfectly fooled: adversary calls everything a cover.
  {
    torch::NoGradGuard guard;
    adv->fc->bias.fill_(-20.0);
  }
  CHECK(adversary_loss_for_encoder(adv, codes).item<double>() < 1e-6);
  CHECK(adversary_own_loss(adv, codes, covers).item<double>() > 5.0);
}

TEST_CASE("gradient isolation between encoder and adversary") {
  torch::manual_seed(62);
  EncoderNet enc(tiny());
  AdversaryNet adv(tiny());
  auto cover = torch::rand({2, 3, 64, 64});
  auto bits = torch::randint(0, 2, {2, 36}).to(torch::kFloat32);

  auto codes = enc(cover, bits);
  auto l_a = adversary_loss_for_encoder(adv, codes);
  l_a.backward();
  double enc_grad = 0.0;
  for (const auto& p : enc->parameters()) {
    if (p.grad().defined()) enc_grad += p.grad().abs().sum().item<double>();
  }
  CHECK(enc_grad > 0.0);
  for (const auto& p : adv->parameters()) {
    CHECK_FALSE(p.grad().defined());
    CHECK(p.requires_grad());  // freezing was restored after the call
  }

  // The adversary's own loss must not touch the encoder.
  enc->zero_grad();
  auto codes2 = enc(cover, bits);
  auto own = adversary_own_loss(adv, codes2, cover);
  own.backward();
  double adv_grad = 0.0;
  for (const auto& p : adv->parameters()) {
    if (p.grad().defined()) adv_grad += p.grad().abs().sum().item<double>();
  }
  CHECK(adv_grad > 0.0);
  for (const auto& p : enc->parameters()) {
    if (p.grad().defined()) CHECK(p.grad().abs().sum().item<double>() == 0.0);
  }
}

TEST_CASE("total loss is the exact weighted sum") {
  auto t = [](double v) { return torch::tensor(v, torch::kFloat64); };
  LossWeights zero;
  CHECK(total_loss(zero, t(3), t(1), t(4), t(1), t(5), t(9)).item<double>() == 0.0);

  LossWeights unit;
  unit.w_i = unit.w_r = unit.w_c = unit.w_k = unit.w_m = unit.w_a = 1.0;
  CHECK(total_loss(unit, t(1), t(1), t(1), t(1), t(1), t(1)).item<double>() == 6.0);

  // Phase-1 weights ignore image, message, and adversary terms.
  auto p1 = LossWeights::phase1();
  auto base = total_loss(p1, t(0.1), t(0.2), t(0.3), t(0.4), t(0.5), t(0.6));
  auto bumped = total_loss(p1, t(9.9), t(0.2), t(0.3), t(0.4), t(7.7), t(8.8));
  CHECK(base.item<double>() == bumped.item<double>());
  CHECK(base.item<double>() ==
        doctest::Approx(0.2 + 0.3 + 1.0e5 * 0.4).epsilon(1e-12));
}

TEST_CASE("loss report keeps the dot-product identity and survives JSON") {
  torch::manual_seed(71);
  auto code = torch::rand({1, 3, 16, 16});
  auto cover = torch::rand({1, 3, 16, 16});
  auto img = image_loss(code, cover, PerceptualMetric::random_init(9));
  RegionOutput pred;
  pred.offsets = torch::randn({1, AnchorGrid::count(), 3});
  pred.logits = torch::randn({1, AnchorGrid::count(), 2});
  auto det = detection_loss(pred, {torch::tensor({{150.0f, 150.0f, 60.0f}})});
  auto lk = torch::tensor(0.002);
  auto lm = torch::tensor(0.21);
  auto la = torch::tensor(0.69);

  auto w = LossWeights::phase2(100.0);
  auto report = make_report(w, img, det, lk, lm, la);
  double expect = w.w_i * report.L_i + w.w_r * report.L_r + w.w_c * report.L_c +
                  w.w_k * report.L_k + w.w_m * report.L_m + w.w_a * report.L_a;
  CHECK(report.L_total == expect);  // bitwise, same expression order
  CHECK(report.L_i ==
        doctest::Approx(report.L_pixel + report.L_chroma + 0.01 * report.L_lpips)
            .epsilon(1e-6));

  auto j = report.to_json();
  auto back = LossReport::from_json(j);
  CHECK(back.L_total == report.L_total);
  CHECK(back.L_chroma == report.L_chroma);
}

TEST_SUITE_END();
