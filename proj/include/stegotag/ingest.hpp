#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "stegotag/common.hpp"
#include "stegotag/geometry.hpp"

namespace stegotag {

// A dataset is assembled from one or more source directories (e.g. a large
// generic photo corpus plus a texture corpus), each contributing a fixed
// number of train and validation images.
struct DatasetSpec {
  struct Source {
    std::filesystem::path root;
    std::string tag;
    int train_count = 0;
    int val_count = 0;
  };
  std::vector<Source> sources;
  int target_resolution = 512;

  void validate() const;
};

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  std::string source;
  std::string split;  // "train" or "val"
};

struct Manifest {
  int resolution = 0;
  std::filesystem::path base_dir;  // where the manifest file lives
  std::vector<ManifestEntry> entries;

  std::vector<int64_t> split_indices(const std::string& split) const;
  std::filesystem::path entry_path(int64_t index) const;
  torch::Tensor load_entry(int64_t index) const;

  void save(const std::filesystem::path& file) const;
  static Manifest load(const std::filesystem::path& file);
};

// Prepare every selected source image (resize shorter side, center crop,
// lossless PNG at spec.target_resolution) under out_dir and write
// out_dir/manifest.json. Selection order is a seeded shuffle of the sorted
// directory listing, so rebuilds with the same seed are bitwise stable.
// Undecodable files are skipped with a warning; running out of usable
// images raises DataError.
Manifest build_dataset(const DatasetSpec& spec,
                       const std::filesystem::path& out_dir, uint64_t seed);

struct SceneSample {
  torch::Tensor scene;  // (3, S, S) float in [0,1]
  int64_t scene_index = 0;
  std::vector<Placement> placements;  // 1..4, pairwise disjoint bounding boxes
};

struct SceneSampleOptions {
  std::pair<double, double> edge_range{0.15, 0.40};
  int max_codes = 4;
  int placement_retries = 40;
};

// Draw a scene image uniformly from the given split and place K in {1..4}
// codes with fresh random ids. K shrinks if non-overlapping placement keeps
// failing; at least one placement always succeeds.
SceneSample sample_scene(const Manifest& manifest, const std::string& split,
                         RngStream& rng,
                         const SceneSampleOptions& opts = SceneSampleOptions());

}  // namespace stegotag
