#include "stegotag/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "stegotag/image_io.hpp"

namespace stegotag {

namespace {

namespace fs = std::filesystem;

bool has_image_extension(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images_sorted(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && has_image_extension(e.path())) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Fisher-Yates with our own stream so the order is reproducible.
void shuffle_paths(std::vector<fs::path>& v, RngStream& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

torch::Tensor prepare_image(const fs::path& src, int target) {
  auto img = load_image_rgb(src).unsqueeze(0);
  const auto h = img.size(2), w = img.size(3);
  const double scale = static_cast<double>(target) / std::min(h, w);
  const auto nh = std::max<int64_t>(target, llround(h * scale));
  const auto nw = std::max<int64_t>(target, llround(w * scale));
  namespace F = torch::nn::functional;
  img = F::interpolate(img, F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{nh, nw})
                                .mode(torch::kBilinear)
                                .align_corners(false)
                                .antialias(true));
  const auto y0 = (nh - target) / 2;
  const auto x0 = (nw - target) / 2;
  return img.squeeze(0)
      .slice(1, y0, y0 + target)
      .slice(2, x0, x0 + target)
      .clamp(0.0, 1.0);
}

}  // namespace

void DatasetSpec::validate() const {
  if (target_resolution <= 0) {
    throw ConfigError("target_resolution must be positive");
  }
  for (const auto& s : sources) {
    if (s.tag.empty()) throw ConfigError("dataset source needs a tag");
    if (s.train_count < 0 || s.val_count < 0) {
      throw ConfigError("image counts must be non-negative");
    }
  }
}

std::vector<int64_t> Manifest::split_indices(const std::string& split) const {
  std::vector<int64_t> out;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == split) out.push_back(static_cast<int64_t>(i));
  }
  return out;
}

std::filesystem::path Manifest::entry_path(int64_t index) const {
  return base_dir / entries.at(static_cast<size_t>(index)).path;
}

torch::Tensor Manifest::load_entry(int64_t index) const {
  return load_image_rgb(entry_path(index));
}

void Manifest::save(const std::filesystem::path& file) const {
  nlohmann::json j;
  j["resolution"] = resolution;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    j["entries"].push_back(
        {{"path", e.path}, {"source", e.source}, {"split", e.split}});
  }
  std::ofstream out(file);
  if (!out) throw DataError("cannot write manifest: " + file.string());
  out << j.dump(2) << "\n";
}

Manifest Manifest::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read manifest: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
  Manifest m;
  try {
    m.resolution = j.at("resolution").get<int>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("path").get<std::string>(),
                           e.at("source").get<std::string>(),
                           e.at("split").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest missing fields: ") + e.what());
  }
  m.base_dir = file.parent_path();
  return m;
}

Manifest build_dataset(const DatasetSpec& spec,
                       const std::filesystem::path& out_dir, uint64_t seed) {
  spec.validate();
  for (const auto& s : spec.sources) {
    if (!fs::is_directory(s.root)) {
      throw ConfigError("dataset source does not exist: " + s.root.string());
    }
  }
  fs::create_directories(out_dir);

  Manifest m;
  m.resolution = spec.target_resolution;
  m.base_dir = out_dir;
  auto rng = make_stream(seed, stream_tag::kDatasetOrder);

  for (const auto& s : spec.sources) {
    auto files = list_images_sorted(s.root);
    shuffle_paths(files, rng);
    const int wanted = s.train_count + s.val_count;
    int taken = 0;
    for (const auto& f : files) {
      if (taken >= wanted) break;
      torch::Tensor img;
      try {
        img = prepare_image(f, spec.target_resolution);
      } catch (const DataError& e) {
        std::cerr << "warning: skipping undecodable image " << f << ": "
                  << e.what() << "\n";
        continue;
      }
      const std::string split = taken < s.train_count ? "train" : "val";
      const std::string rel =
          s.tag + "_" + std::to_string(taken) + ".png";
      save_png_rgb(out_dir / rel, img);
      m.entries.push_back({rel, s.tag, split});
      taken++;
    }
    if (taken < wanted) {
      throw DataError("source '" + s.tag + "' has only " +
                      std::to_string(taken) + " usable images, need " +
                      std::to_string(wanted));
    }
  }
  m.save(out_dir / "manifest.json");
  return m;
}

namespace {

bool boxes_disjoint(const std::array<double, 4>& a,
                    const std::array<double, 4>& b) {
  return a[2] <= b[0] || b[2] <= a[0] || a[3] <= b[1] || b[3] <= a[1];
}

}  // namespace

SceneSample sample_scene(const Manifest& manifest, const std::string& split,
                         RngStream& rng, const SceneSampleOptions& opts) {
  auto idx = manifest.split_indices(split);
  if (idx.empty()) {
    throw ContractError("manifest has no entries in split '" + split + "'");
  }
  if (opts.max_codes < 1 || opts.max_codes > 4) {
    throw ConfigError("max_codes must be in 1..4");
  }

  SceneSample sample;
  sample.scene_index =
      idx[static_cast<size_t>(rng.uniform_int(0, int64_t(idx.size()) - 1))];
  sample.scene = manifest.load_entry(sample.scene_index);
  const int size = static_cast<int>(sample.scene.size(1));

  const int k = static_cast<int>(rng.uniform_int(1, opts.max_codes));
  std::vector<std::array<double, 4>> taken;
  for (int i = 0; i < k; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < opts.placement_retries && !placed;
         ++attempt) {
      Quad q = sample_quad(rng, size, opts.edge_range);
      auto bb = q.bounding_box();
      bool clear = true;
      for (const auto& t : taken) {
        if (!boxes_disjoint(bb, t)) {
          clear = false;
          break;
        }
      }
      if (clear) {
        taken.push_back(bb);
        Placement p;
        p.quad = q;
        p.code_id = random_id(rng);
        p.scene_index = sample.scene_index;
        sample.placements.push_back(p);
        placed = true;
      }
    }
    if (!placed) break;  // shrink K rather than fail
  }
  return sample;
}

}  // namespace stegotag
