#include "test_util.hpp"

#include <fstream>
#include <set>

#include "stegotag/image_io.hpp"
#include "stegotag/ingest.hpp"

using namespace stegotag;

namespace {

// Writes n small PNGs (varying sizes and aspect ratios) under dir.
void make_corpus(const std::filesystem::path& dir, int n, uint64_t seed) {
  std::filesystem::create_directories(dir);
  auto rng = make_stream(seed, 99);
  for (int i = 0; i < n; ++i) {
    const auto h = 40 + rng.uniform_int(0, 40);
    const auto w = 40 + rng.uniform_int(0, 40);
    torch::manual_seed(static_cast<uint64_t>(seed * 1000 + i));
    auto img = torch::rand({3, h, w});
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", i);
    save_png_rgb(dir / name, img);
  }
}

DatasetSpec small_spec(const std::filesystem::path& root) {
  DatasetSpec spec;
  spec.target_resolution = 64;
  spec.sources.push_back({root / "generic", "generic", 6, 2});
  spec.sources.push_back({root / "texture", "texture", 3, 1});
  return spec;
}

}  // namespace

TEST_SUITE_BEGIN("ingest");

TEST_CASE("build_dataset prepares square RGB images and a manifest") {
  testutil::TempDir tmp("ingest_build");
  make_corpus(tmp.path() / "generic", 10, 1);
  make_corpus(tmp.path() / "texture", 6, 2);

  auto m = build_dataset(small_spec(tmp.path()), tmp.path() / "out", 7);
  CHECK(m.resolution == 64);
  CHECK(m.entries.size() == 12);
  CHECK(m.split_indices("train").size() == 9);
  CHECK(m.split_indices("val").size() == 3);

  // Every entry reloads as an exact-resolution RGB tensor.
  for (size_t i = 0; i < m.entries.size(); ++i) {
    auto img = m.load_entry(static_cast<int64_t>(i));
    CHECK(img.sizes() == torch::IntArrayRef{3, 64, 64});
    CHECK(img.min().item<float>() >= 0.0f);
    CHECK(img.max().item<float>() <= 1.0f);
  }

  // Manifest file round trip.
  auto loaded = Manifest::load(tmp.path() / "out" / "manifest.json");
  CHECK(loaded.resolution == 64);
  CHECK(loaded.entries.size() == 12);
  CHECK(loaded.entries[0].path == m.entries[0].path);
  CHECK(torch::equal(loaded.load_entry(0), m.load_entry(0)));
}

TEST_CASE("rebuilds with the same seed are bitwise stable") {
  testutil::TempDir tmp("ingest_stable");
  make_corpus(tmp.path() / "generic", 10, 3);
  make_corpus(tmp.path() / "texture", 6, 4);
  auto spec = small_spec(tmp.path());

  build_dataset(spec, tmp.path() / "a", 11);
  build_dataset(spec, tmp.path() / "b", 11);
  auto ma = Manifest::load(tmp.path() / "a" / "manifest.json");
  for (const auto& e : ma.entries) {
    std::ifstream fa(tmp.path() / "a" / e.path, std::ios::binary);
    std::ifstream fb(tmp.path() / "b" / e.path, std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), {});
    std::string bb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(ba == bb);
  }

  // A different seed picks a different subset (10 choose 8 leaves room).
  build_dataset(spec, tmp.path() / "c", 12);
  std::ifstream fa(tmp.path() / "a" / "manifest.json", std::ios::binary);
  std::ifstream fc(tmp.path() / "c" / "manifest.json", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {});
  std::string sc((std::istreambuf_iterator<char>(fc)), {});
  // Manifests list the same output names; image bytes may differ. Compare
  // one prepared file across seeds instead.
  bool any_differ = false;
  for (const auto& e : ma.entries) {
    std::ifstream f1(tmp.path() / "a" / e.path, std::ios::binary);
    std::ifstream f2(tmp.path() / "c" / e.path, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    if (b1 != b2) any_differ = true;
  }
  CHECK(any_differ);
  (void)sa;
  (void)sc;
}

TEST_CASE("empty spec gives an empty manifest") {
  testutil::TempDir tmp("ingest_empty");
  make_corpus(tmp.path() / "generic", 2, 5);
  DatasetSpec spec;
  spec.target_resolution = 32;
  spec.sources.push_back({tmp.path() / "generic", "generic", 0, 0});
  auto m = build_dataset(spec, tmp.path() / "out", 1);
  CHECK(m.entries.empty());
}

TEST_CASE("undecodable files are skipped, shortages raise") {
  testutil::TempDir tmp("ingest_bad");
  make_corpus(tmp.path() / "generic", 4, 6);
  {
    std::ofstream f(tmp.path() / "generic" / "img_000.png",
                    std::ios::binary | std::ios::trunc);
    f << "not a png at all";
  }
  DatasetSpec spec;
  spec.target_resolution = 32;
  spec.sources.push_back({tmp.path() / "generic", "generic", 3, 0});
  auto m = build_dataset(spec, tmp.path() / "out", 1);
  CHECK(m.entries.size() == 3);

  spec.sources[0].train_count = 4;  // only 3 decodable remain
  CHECK_THROWS_AS(build_dataset(spec, tmp.path() / "out2", 1), DataError);

  DatasetSpec missing;
  missing.target_resolution = 32;
  missing.sources.push_back({tmp.path() / "nowhere", "gone", 1, 0});
  CHECK_THROWS_AS(build_dataset(missing, tmp.path() / "out3", 1), ConfigError);
}

TEST_CASE("train and val are disjoint by file identity") {
  testutil::TempDir tmp("ingest_disjoint");
  make_corpus(tmp.path() / "generic", 10, 7);
  make_corpus(tmp.path() / "texture", 6, 8);
  auto m = build_dataset(small_spec(tmp.path()), tmp.path() / "out", 3);
  std::set<std::string> train, val;
  for (const auto& e : m.entries) {
    (e.split == "train" ? train : val).insert(e.path);
  }
  for (const auto& p : val) CHECK(train.count(p) == 0);
}

TEST_CASE("sample_scene is deterministic and respects placement rules") {
  testutil::TempDir tmp("ingest_scene");
  make_corpus(tmp.path() / "generic", 6, 9);
  DatasetSpec spec;
  spec.target_resolution = 128;
  spec.sources.push_back({tmp.path() / "generic", "generic", 4, 2});
  auto m = build_dataset(spec, tmp.path() / "out", 4);

  auto r1 = make_stream(42, stream_tag::kSceneSampling);
  auto r2 = make_stream(42, stream_tag::kSceneSampling);
  auto s1 = sample_scene(m, "train", r1);
  auto s2 = sample_scene(m, "train", r2);
  CHECK(s1.scene_index == s2.scene_index);
  CHECK(torch::equal(s1.scene, s2.scene));
  REQUIRE(s1.placements.size() == s2.placements.size());
  for (size_t i = 0; i < s1.placements.size(); ++i) {
    CHECK(s1.placements[i].code_id.value() == s2.placements[i].code_id.value());
    CHECK(torch::equal(s1.placements[i].quad.to_tensor(),
                       s2.placements[i].quad.to_tensor()));
  }

  // Many samples: K in 1..4 with every value occurring, quads valid and
  // pairwise bbox-disjoint.
  auto rng = make_stream(7, stream_tag::kSceneSampling);
  std::set<size_t> seen_k;
  for (int i = 0; i < 400; ++i) {
    auto s = sample_scene(m, "train", rng);
    REQUIRE(s.placements.size() >= 1);
    REQUIRE(s.placements.size() <= 4);
    seen_k.insert(s.placements.size());
    std::vector<std::array<double, 4>> boxes;
    for (const auto& p : s.placements) {
      CHECK(p.quad.is_convex());
      CHECK(p.quad.in_bounds(128, 128));
      boxes.push_back(p.quad.bounding_box());
    }
    for (size_t a = 0; a < boxes.size(); ++a) {
      for (size_t b = a + 1; b < boxes.size(); ++b) {
        const bool disjoint =
            boxes[a][2] <= boxes[b][0] || boxes[b][2] <= boxes[a][0] ||
            boxes[a][3] <= boxes[b][1] || boxes[b][3] <= boxes[a][1];
        CHECK(disjoint);
      }
    }
  }
  CHECK(seen_k.size() == 4);

  CHECK_THROWS_AS(sample_scene(m, "test", rng), ContractError);
}

TEST_SUITE_END();
