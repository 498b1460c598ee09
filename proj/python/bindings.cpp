// Python surface: the main pipeline operations on numpy images.
//
// Images cross the boundary as float32 (H, W, 3) arrays in [0, 1]; the
// torch tensors stay an implementation detail. Model state is wrapped in a
// Bundle handle loaded from the directory format the CLI writes.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <torch/torch.h>

#include "stegotag/common.hpp"
#include "stegotag/detect.hpp"
#include "stegotag/idcodec.hpp"
#include "stegotag/image_io.hpp"
#include "stegotag/nets.hpp"
#include "stegotag/pose.hpp"
#include "stegotag/synthcorpus.hpp"

namespace py = pybind11;
using namespace stegotag;

namespace {

using FloatArray =
    py::array_t<float, py::array::c_style | py::array::forcecast>;

torch::Tensor array_to_chw(const FloatArray& arr) {
  if (arr.ndim() != 3 || arr.shape(2) != 3) {
    throw ContractError("image array must have shape (H, W, 3)");
  }
  auto t = torch::from_blob(const_cast<float*>(arr.data()),
                            {arr.shape(0), arr.shape(1), arr.shape(2)},
                            torch::kFloat32);
  return t.permute({2, 0, 1}).clone();
}

FloatArray chw_to_array(const torch::Tensor& chw) {
  auto hwc = chw.detach()
                 .to(torch::kFloat32)
                 .permute({1, 2, 0})
                 .contiguous();
  FloatArray out({hwc.size(0), hwc.size(1), hwc.size(2)});
  std::memcpy(out.mutable_data(), hwc.data_ptr<float>(),
              sizeof(float) * static_cast<size_t>(hwc.numel()));
  return out;
}

py::array_t<double> corners_array(const std::array<Vec2, 4>& corners) {
  py::array_t<double> out({static_cast<py::ssize_t>(4), static_cast<py::ssize_t>(2)});
  auto a = out.mutable_unchecked<2>();
  for (int i = 0; i < 4; ++i) {
    a(i, 0) = corners[static_cast<size_t>(i)].x;
    a(i, 1) = corners[static_cast<size_t>(i)].y;
  }
  return out;
}

struct PyBundle {
  ModelBundle bundle;

  static PyBundle load(const std::filesystem::path& dir) {
    PyBundle b{ModelBundle::load(dir)};
    b.bundle.to_eval();
    return b;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Steganographic fiducial markers: encode, detect, decode, pose";
  m.attr("__version__") = "0.1.0";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ContractError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  py::class_<DetectionResult>(m, "Detection")
      .def_property_readonly(
          "corners",
          [](const DetectionResult& d) { return corners_array(d.corners); },
          "Corner pixels, (4, 2), top-left first then clockwise")
      .def_property_readonly(
          "id_hex", [](const DetectionResult& d) { return d.id.to_hex(); })
      .def_property_readonly("payload_hex",
                             [](const DetectionResult& d) -> py::object {
                               if (!d.payload) return py::none();
                               return py::str(d.payload->to_hex());
                             })
      .def_readonly("region_confidence", &DetectionResult::region_confidence)
      .def_readonly("bit_confidence", &DetectionResult::bit_confidence)
      .def("__repr__", [](const DetectionResult& d) {
        return "<Detection id=" + d.id.to_hex() + " confidence=" +
               std::to_string(d.region_confidence) + ">";
      });

  py::class_<PyBundle>(m, "Bundle")
      .def_static("load", &PyBundle::load, py::arg("directory"),
                  "Load a trained model bundle directory")
      .def_static(
          "create",
          [](const std::filesystem::path& dir, const std::string& preset,
             uint64_t seed) {
            NetScale scale;
            if (preset == "desk") {
              scale = NetScale::desk();
            } else if (preset != "paper") {
              throw ConfigError("preset must be \"paper\" or \"desk\"");
            }
            ModelBundle fresh(scale, seed);
            fresh.save(dir);
            return PyBundle::load(dir);
          },
          py::arg("directory"), py::arg("preset") = "desk",
          py::arg("seed") = 0,
          "Initialize an untrained bundle and save it to a directory")
      .def_property_readonly(
          "image_size",
          [](const PyBundle& b) { return b.bundle.scale.image_size; })
      .def_property_readonly(
          "phase", [](const PyBundle& b) { return b.bundle.meta.phase; })
      .def(
          "encode",
          [](PyBundle& b, const FloatArray& cover, const std::string& id_hex) {
            torch::NoGradGuard guard;
            auto t = array_to_chw(cover);
            if (t.size(1) != b.bundle.scale.image_size ||
                t.size(2) != b.bundle.scale.image_size) {
              throw ContractError("cover must be " +
                                  std::to_string(b.bundle.scale.image_size) +
                                  " pixels square");
            }
            auto id = CodeId::from_hex(id_hex);
            auto code = b.bundle
                            .encoder(t.unsqueeze(0),
                                     id.to_tensor().unsqueeze(0))
                            .squeeze(0)
                            .clamp(0, 1);
            return chw_to_array(code);
          },
          py::arg("cover"), py::arg("id_hex"),
          "Embed a 36-bit id (9 hex digits) into a square cover image")
      .def(
          "detect",
          [](PyBundle& b, const FloatArray& image, double confidence,
             double nms_iou, bool ecc) {
            torch::NoGradGuard guard;
            PipelineConfig cfg;
            cfg.confidence_threshold = confidence;
            cfg.nms_iou = nms_iou;
            cfg.ecc = ecc;
            cfg.validate();
            auto t = array_to_chw(image);
            return detect_all(t, b.bundle, cfg);
          },
          py::arg("image"), py::arg("confidence") = 0.5,
          py::arg("nms_iou") = 0.45, py::arg("ecc") = false,
          "Find codes; corners come back in the input image's pixels")
      .def(
          "reverse",
          [](PyBundle& b, const FloatArray& code) {
            torch::NoGradGuard guard;
            auto t = array_to_chw(code);
            auto recon = b.bundle.reverse(t.unsqueeze(0)).squeeze(0).clamp(0, 1);
            return chw_to_array(recon);
          },
          py::arg("code"), "Reconstruct an approximate cover from a code");

  m.def(
      "solve_pose",
      [](PyBundle& b, const FloatArray& image,
         const std::filesystem::path& registry_file,
         const std::filesystem::path& intrinsics_file,
         double min_bit_confidence) {
        torch::NoGradGuard guard;
        auto registry = CodeRegistry::load(registry_file);
        auto k = CameraIntrinsics::load(intrinsics_file);
        auto t = array_to_chw(image);
        auto detections = detect_all(t, b.bundle, PipelineConfig{});
        auto res = solve_pose(detections, registry, k, min_bit_confidence);

        py::array_t<double> R({static_cast<py::ssize_t>(3), static_cast<py::ssize_t>(3)});
        auto ra = R.mutable_unchecked<2>();
        py::array_t<double> tvec(3);
        auto ta = tvec.mutable_unchecked<1>();
        py::array_t<double> center(3);
        auto ca = center.mutable_unchecked<1>();
        auto cc = res.pose.camera_center();
        for (int r = 0; r < 3; ++r) {
          ta(r) = res.pose.t(r);
          ca(r) = cc(r);
          for (int c = 0; c < 3; ++c) ra(r, c) = res.pose.R(r, c);
        }
        return py::dict(
            py::arg("R") = R, py::arg("t") = tvec,
            py::arg("camera_center") = center, py::arg("rms_px") = res.rms_px,
            py::arg("iterations") = res.iterations,
            py::arg("points") = res.points,
            py::arg("detections") = detections);
      },
      py::arg("bundle"), py::arg("image"), py::arg("registry_file"),
      py::arg("intrinsics_file"), py::arg("min_bit_confidence") = 0.2,
      "Detect codes and solve the world-to-camera pose. Raises RuntimeError "
      "when no registered code is visible.");

  m.def(
      "rs_encode",
      [](const std::string& payload_hex) {
        return rs_encode(Payload::from_hex(payload_hex)).to_hex();
      },
      py::arg("payload_hex"),
      "Expand a 24-bit payload (6 hex digits) to a 36-bit codeword");
  m.def(
      "rs_decode",
      [](const std::string& id_hex) -> py::object {
        auto payload = rs_decode(CodeId::from_hex(id_hex));
        if (!payload) return py::none();
        return py::str(payload->to_hex());
      },
      py::arg("id_hex"),
      "Recover the payload from a codeword, correcting up to one symbol; "
      "None when uncorrectable");

  m.def(
      "synthesize_texture",
      [](uint64_t seed, int height, int width) {
        auto rng = make_stream(seed, stream_tag::kSynthCorpus);
        return chw_to_array(synthesize_texture(rng, height, width));
      },
      py::arg("seed"), py::arg("height"), py::arg("width"),
      "Deterministic procedural texture, (H, W, 3) float32 in [0, 1]");

  m.def(
      "load_image",
      [](const std::filesystem::path& path) {
        return chw_to_array(load_image_rgb(path));
      },
      py::arg("path"), "Decode a PNG/JPEG file to (H, W, 3) float32");
  m.def(
      "save_png",
      [](const std::filesystem::path& path, const FloatArray& image) {
        save_png_rgb(path, array_to_chw(image));
      },
      py::arg("path"), py::arg("image"),
      "Write (H, W, 3) float32 in [0, 1] as an 8-bit PNG");
}
