#include "stegotag/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stegotag/color.hpp"
#include "stegotag/common.hpp"
#include "stegotag/image_io.hpp"

namespace stegotag {

namespace {
namespace F = torch::nn::functional;
}  // namespace

torch::Tensor prepare_cover(const std::filesystem::path& path, int size) {
  auto img = load_image_rgb(path);
  const auto h = img.size(1), w = img.size(2);
  const double scale = static_cast<double>(size) / static_cast<double>(std::min(h, w));
  const auto nh = std::max<int64_t>(size, llround(h * scale));
  const auto nw = std::max<int64_t>(size, llround(w * scale));
  img = F::interpolate(img.unsqueeze(0),
                       F::InterpolateFuncOptions()
                           .size(std::vector<int64_t>{nh, nw})
                           .mode(torch::kBilinear)
                           .align_corners(false)
                           .antialias(true))
            .squeeze(0)
            .clamp(0, 1);
  const auto y0 = (nh - size) / 2, x0 = (nw - size) / 2;
  return img.slice(1, y0, y0 + size).slice(2, x0, x0 + size).contiguous();
}

namespace {

nlohmann::json vec3_json(const Eigen::Vector3d& v) {
  return {v.x(), v.y(), v.z()};
}

Eigen::Vector3d vec3_from(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

double corner_error(const std::array<Vec2, 4>& pred,
                    const std::array<Vec2, 4>& gt) {
  double best = std::numeric_limits<double>::infinity();
  for (int shift = 0; shift < 4; ++shift) {
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
      const auto& p = pred[static_cast<size_t>((i + shift) % 4)];
      const auto& g = gt[static_cast<size_t>(i)];
      acc += std::hypot(p.x - g.x, p.y - g.y);
    }
    best = std::min(best, acc / 4.0);
  }
  return best;
}

double drop_rate(const std::vector<FailureClass>& outcomes) {
  if (outcomes.empty()) throw ContractError("drop_rate needs at least one trial");
  const auto failed = std::count_if(
      outcomes.begin(), outcomes.end(),
      [](FailureClass c) { return c != FailureClass::kFoundCorrect; });
  return 100.0 * static_cast<double>(failed) /
         static_cast<double>(outcomes.size());
}

PoseError pose_error(const Pose& pred, const Pose& gt) {
  PoseError e;
  e.position_cm = (pred.camera_center() - gt.camera_center()).norm() * 100.0;
  const double c = ((pred.R * gt.R.transpose()).trace() - 1.0) / 2.0;
  e.rotation_deg = std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / M_PI;
  return e;
}

double local_rms_contrast(const torch::Tensor& rgb, int patch_size) {
  if (rgb.dim() != 3 || rgb.size(0) != 3) {
    throw ContractError("local_rms_contrast expects a (3, H, W) image");
  }
  if (patch_size < 2) throw ContractError("patch_size must be >= 2");
  const auto h = rgb.size(1), w = rgb.size(2);
  const int64_t gh = h / patch_size, gw = w / patch_size;
  if (gh < 1 || gw < 1) {
    throw ContractError("image smaller than one contrast patch");
  }
  auto yuv = rgb_to_yuv(rgb.to(torch::kFloat32))
                 .slice(1, 0, gh * patch_size)
                 .slice(2, 0, gw * patch_size);
  auto patches = yuv.reshape({3, gh, patch_size, gw, patch_size})
                     .permute({0, 1, 3, 2, 4})
                     .reshape({3, gh * gw, patch_size * patch_size});
  // Population standard deviation per patch, averaged over grid and
  // channels.
  auto sd = patches.var(/*dim=*/2, /*unbiased=*/false).clamp_min(0).sqrt();
  return sd.mean().item<double>();
}

// ---------------------------------------------------------------------------
// Benchmark configuration

void BenchmarkConfig::validate() const {
  if (stations.empty()) throw ConfigError("benchmark needs >= 1 station");
  if (trials_per_station < 1) throw ConfigError("trials_per_station must be >= 1");
  if (render_width < 64 || render_height < 64) {
    throw ConfigError("render size must be at least 64 px");
  }
  if (!(code_side_m > 0.0)) throw ConfigError("code_side_m must be positive");
  intrinsics.validate();
  camera.validate();
  pipeline.validate();
  for (const auto& s : stations) {
    if ((s.target - s.position).norm() < 1e-9) {
      throw ConfigError("station position coincides with its target");
    }
  }
}

std::vector<CameraStation> BenchmarkConfig::default_stations() {
  // Eight oblique desk-distance stations on a ring around the code (which
  // lies in the z = 0 plane, viewed from z < 0). Obliqueness keeps the
  // planar pose problem away from its fronto-parallel ambiguity.
  std::vector<CameraStation> st;
  for (int i = 0; i < 8; ++i) {
    const double azim = 2.0 * M_PI * i / 8.0;
    const double tilt = (i % 2 == 0) ? 0.45 : 0.60;  // rad from the normal
    const double dist = (i % 2 == 0) ? 0.50 : 0.58;
    CameraStation s;
    s.position = Eigen::Vector3d(dist * std::sin(tilt) * std::cos(azim),
                                 dist * std::sin(tilt) * std::sin(azim),
                                 -dist * std::cos(tilt));
    s.target = Eigen::Vector3d::Zero();
    s.roll = (i % 3 == 0) ? 0.15 : -0.1;
    st.push_back(s);
  }
  return st;
}

BenchmarkConfig BenchmarkConfig::load_stations(
    const BenchmarkConfig& base, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open station file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid station file: " + std::string(e.what()));
  }
  BenchmarkConfig cfg = base;
  cfg.stations.clear();
  for (const auto& s : j.at("stations")) {
    CameraStation st;
    st.position = vec3_from(s.at("position"));
    st.target = vec3_from(s.at("target"));
    st.roll = s.value("roll", 0.0);
    cfg.stations.push_back(st);
  }
  if (j.contains("intrinsics")) {
    cfg.intrinsics = CameraIntrinsics::from_json(j.at("intrinsics"));
  }
  cfg.render_width = j.value("render_width", cfg.render_width);
  cfg.render_height = j.value("render_height", cfg.render_height);
  cfg.code_side_m = j.value("code_side_m", cfg.code_side_m);
  cfg.trials_per_station = j.value("trials_per_station", cfg.trials_per_station);
  cfg.validate();
  return cfg;
}

void BenchmarkConfig::save_stations(const std::filesystem::path& path) const {
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stations) {
    st.push_back({{"position", vec3_json(s.position)},
                  {"target", vec3_json(s.target)},
                  {"roll", s.roll}});
  }
  nlohmann::json j{{"stations", st},
                   {"intrinsics", intrinsics.to_json()},
                   {"render_width", render_width},
                   {"render_height", render_height},
                   {"code_side_m", code_side_m},
                   {"trials_per_station", trials_per_station}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write station file " + path.string());
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Report

nlohmann::json BenchmarkReport::to_json() const {
  nlohmann::json tex = nlohmann::json::array();
  for (const auto& t : textures) {
    tex.push_back({{"name", t.name},
                   {"rms_contrast", t.rms_contrast},
                   {"corner_error_300", t.corner_error_300},
                   {"corner_samples", t.corner_samples},
                   {"trials", t.trials},
                   {"failures", t.failures},
                   {"drop_rate_pct", t.drop_rate_pct}});
  }
  nlohmann::json st = nlohmann::json::array();
  for (const auto& s : stations) {
    st.push_back({{"index", s.index},
                  {"mean_position_err_cm", s.mean_position_err_cm},
                  {"mean_rotation_err_deg", s.mean_rotation_err_deg},
                  {"samples", s.samples}});
  }
  return {{"textures", tex},
          {"stations", st},
          {"total_trials", total_trials},
          {"total_failures", total_failures},
          {"overall_drop_rate_pct", overall_drop_rate_pct},
          {"mean_corner_error_300", mean_corner_error_300},
          {"low_recall", low_recall}};
}

std::string BenchmarkReport::to_text_table() const {
  std::ostringstream os;
  os << "texture                      contrast  corner(px)  drop(%)  trials\n";
  os << "-----------------------------------------------------------------\n";
  char buf[160];
  for (const auto& t : textures) {
    std::snprintf(buf, sizeof(buf), "%-28s %7.4f  %9.3f  %6.2f  %6d\n",
                  t.name.c_str(), t.rms_contrast,
                  t.corner_samples > 0 ? t.corner_error_300 : std::nan(""),
                  t.drop_rate_pct, t.trials);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "overall: corner %.3f px, drop %.2f%% (%d/%d trials)%s\n",
                mean_corner_error_300, overall_drop_rate_pct, total_failures,
                total_trials, low_recall ? "  [LOW RECALL]" : "");
  os << buf;
  os << "\nstation   pos err (cm)  rot err (deg)  samples\n";
  os << "----------------------------------------------\n";
  for (const auto& s : stations) {
    std::snprintf(buf, sizeof(buf), "%7d  %12.3f  %13.3f  %7d\n", s.index,
                  s.samples > 0 ? s.mean_position_err_cm : std::nan(""),
                  s.samples > 0 ? s.mean_rotation_err_deg : std::nan(""),
                  s.samples);
    os << buf;
  }
  return os.str();
}

double failure_share_of_top_contrast(const BenchmarkReport& report, int top_k) {
  if (report.total_failures == 0 || report.textures.empty()) return 0.0;
  std::vector<size_t> order(report.textures.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return report.textures[a].rms_contrast > report.textures[b].rms_contrast;
  });
  int acc = 0;
  for (size_t i = 0; i < order.size() && i < static_cast<size_t>(top_k); ++i) {
    acc += report.textures[order[i]].failures;
  }
  return static_cast<double>(acc) / static_cast<double>(report.total_failures);
}

// ---------------------------------------------------------------------------
// Benchmark run

BenchmarkReport run_detection_benchmark(const BenchmarkConfig& cfg,
                                        ModelBundle& bundle) {
  cfg.validate();
  if (cfg.textures.empty()) throw ConfigError("benchmark needs >= 1 texture");
  torch::NoGradGuard guard;
  bundle.to_eval();

  const int S = bundle.scale.image_size;
  auto id_rng = make_stream(cfg.seed, stream_tag::kCodeIds);
  const Letterbox lb =
      Letterbox::fit(cfg.render_width, cfg.render_height,
                     bundle.scale.detector_size);

  BenchmarkReport report;
  const auto n_st = cfg.stations.size();
  std::vector<double> st_pos(n_st, 0.0), st_rot(n_st, 0.0);
  std::vector<int> st_n(n_st, 0);
  double corner_acc = 0.0;
  int corner_n = 0;

  for (size_t ti = 0; ti < cfg.textures.size(); ++ti) {
    const auto& path = cfg.textures[ti];
    auto cover = prepare_cover(path, S);
    const CodeId id = random_id(id_rng);
    auto code =
        bundle.encoder(cover.unsqueeze(0), id.to_tensor().unsqueeze(0))
            .squeeze(0);

    CodeRegistry registry;
    registry.add(planar_entry(id, cfg.code_side_m, Eigen::Vector3d::Zero(),
                              Eigen::Vector3d(1, 0, 0),
                              Eigen::Vector3d(0, 1, 0)));
    const auto& world = registry.entries()[0].corners_world;

    TextureStats ts;
    ts.name = path.filename().string();
    ts.rms_contrast = local_rms_contrast(cover);
    double tex_corner_acc = 0.0;
    int tex_corner_n = 0;

    for (size_t si = 0; si < n_st; ++si) {
      const Pose gt_pose = cfg.stations[si].pose();
      std::array<Vec2, 4> img_corners;
      for (size_t i = 0; i < 4; ++i) {
        img_corners[i] = project_point(gt_pose, world[i], cfg.intrinsics);
      }
      const Quad quad(img_corners);
      quad.validate();
      if (!quad.in_bounds(cfg.render_width, cfg.render_height)) {
        throw ConfigError("station " + std::to_string(si) +
                          " projects the code outside the render frame");
      }

      for (int trial = 0; trial < cfg.trials_per_station; ++trial) {
        auto rng = make_stream(cfg.seed, stream_tag::kEval)
                       .child(ti)
                       .child(si)
                       .child(static_cast<uint64_t>(trial));
        auto scene = torch::full({3, cfg.render_height, cfg.render_width}, 0.5);
        scene = paste_patch(scene, code, quad);
        if (!cfg.noise_free) scene = camera_noise(scene, rng, cfg.camera);

        std::vector<DetectionResult> dets;
        if (cfg.oracle_corners) {
          DetectionResult oracle;
          oracle.corners = img_corners;
          oracle.id = id;
          if (cfg.pipeline.ecc) oracle.payload = rs_decode(id);
          oracle.region_confidence = 1.0;
          oracle.bit_confidence = 1.0;
          dets.push_back(oracle);
        } else {
          dets = detect_all(scene, bundle, cfg.pipeline);
        }

        const auto outcome = classify_failure(dets, quad, id, cfg.pipeline.ecc);
        ts.trials++;
        report.total_trials++;
        if (outcome != FailureClass::kFoundCorrect) {
          ts.failures++;
          report.total_failures++;
          continue;
        }

        // The detection that matched: best bounding-square IoU against the
        // ground-truth quad (the same criterion classify_failure uses).
        const auto bb = quad.bounding_box();
        const double side = std::max(bb[2] - bb[0], bb[3] - bb[1]);
        auto gt_sq = torch::tensor({(bb[0] + bb[2]) / 2, (bb[1] + bb[3]) / 2,
                                    side},
                                   torch::kFloat32);
        const DetectionResult* best_det = nullptr;
        double best_iou = 0.0;
        for (const auto& d : dets) {
          const auto db = d.quad().bounding_box();
          const double dside = std::max(db[2] - db[0], db[3] - db[1]);
          auto d_sq = torch::tensor(
              {(db[0] + db[2]) / 2, (db[1] + db[3]) / 2, dside},
              torch::kFloat32);
          const double iou =
              square_iou(gt_sq.unsqueeze(0), d_sq.unsqueeze(0)).item<double>();
          if (iou > best_iou) {
            best_iou = iou;
            best_det = &d;
          }
        }
        if (best_det) {
          std::array<Vec2, 4> p300, g300;
          for (size_t i = 0; i < 4; ++i) {
            p300[i] = lb.to_detector(best_det->corners[i]);
            g300[i] = lb.to_detector(img_corners[i]);
          }
          const double err = corner_error(p300, g300);
          tex_corner_acc += err;
          tex_corner_n++;
          corner_acc += err;
          corner_n++;
        }

        try {
          auto solved = solve_pose(dets, registry, cfg.intrinsics);
          const auto pe = pose_error(solved.pose, gt_pose);
          st_pos[si] += pe.position_cm;
          st_rot[si] += pe.rotation_deg;
          st_n[si]++;
        } catch (const Error&) {
          // Unsolvable trial: leave the station sample out.
        }
      }
    }

    ts.corner_samples = tex_corner_n;
    ts.corner_error_300 = tex_corner_n > 0 ? tex_corner_acc / tex_corner_n : 0.0;
    ts.drop_rate_pct = ts.trials > 0
                           ? 100.0 * ts.failures / static_cast<double>(ts.trials)
                           : 0.0;
    report.textures.push_back(std::move(ts));
  }

  for (size_t si = 0; si < n_st; ++si) {
    StationStats ss;
    ss.index = static_cast<int>(si);
    ss.samples = st_n[si];
    if (st_n[si] > 0) {
      ss.mean_position_err_cm = st_pos[si] / st_n[si];
      ss.mean_rotation_err_deg = st_rot[si] / st_n[si];
    }
    report.stations.push_back(ss);
  }
  report.overall_drop_rate_pct =
      report.total_trials > 0
          ? 100.0 * report.total_failures / static_cast<double>(report.total_trials)
          : 0.0;
  report.mean_corner_error_300 = corner_n > 0 ? corner_acc / corner_n : 0.0;
  report.low_recall =
      report.total_trials == 0 ||
      (report.total_trials - report.total_failures) * 2 < report.total_trials;
  return report;
}

}  // namespace stegotag
