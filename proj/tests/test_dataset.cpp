#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "dataset.hpp"
#include "doctest.h"
#include "error.hpp"

using namespace mdkt;

namespace {

namespace fs = std::filesystem;

DatasetConfig small_config() {
  DatasetConfig c;
  c.n_train_ids = 6;
  c.n_test_ids = 3;
  c.n_cameras = 2;
  c.frames_per_clip = 4;
  c.clips_per_id_per_camera = 2;
  c.latent_dim = 4;
  c.frame_dim = 8;
  c.seed = 99;
  return c;
}

std::vector<double> clip_mean(const ClipSample& clip) {
  std::vector<double> mean(clip.frame_dim, 0.0);
  for (std::uint32_t t = 0; t < clip.n_frames; ++t) {
    for (std::uint32_t d = 0; d < clip.frame_dim; ++d) {
      mean[d] += clip.frames[t * clip.frame_dim + d];
    }
  }
  for (double& v : mean) v /= clip.n_frames;
  return mean;
}

std::string temp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generate produces the counted number of clips") {
  DatasetConfig c;  // defaults: 50/20 ids, 4 cameras, 2 clips each
  Dataset ds = generate(c);
  CHECK(ds.train_clips.size() == 400);
  CHECK(ds.test_clips.size() == 160);
  CHECK(ds.train_identities().size() == 50);
  CHECK(ds.test_identities().size() == 20);
}

TEST_CASE("train and test identity sets are disjoint") {
  Dataset ds = generate(small_config());
  std::set<std::uint32_t> train(ds.train_identities().begin(), ds.train_identities().end());
  for (std::uint32_t id : ds.test_identities()) CHECK(!train.contains(id));
}

TEST_CASE("generation is a pure function of the config") {
  const DatasetConfig c = small_config();
  Dataset a = generate(c);
  Dataset b = generate(c);
  CHECK(a == b);

  DatasetConfig other = c;
  other.seed += 1;
  CHECK(!(generate(other) == a));
}

TEST_CASE("degenerate generator: no camera shift, no noise") {
  DatasetConfig c = small_config();
  c.camera_scale = 0.0;
  c.noise_scale = 0.0;
  Dataset ds = generate(c);
  // all frames of one identity are the same vector, across cameras and clips
  for (std::uint32_t id : ds.train_identities()) {
    std::vector<double> reference;
    for (const ClipSample& clip : ds.train_clips) {
      if (clip.identity != id) continue;
      for (std::uint32_t t = 0; t < clip.n_frames; ++t) {
        std::vector<double> frame(clip.frames.begin() + t * clip.frame_dim,
                                  clip.frames.begin() + (t + 1) * clip.frame_dim);
        if (reference.empty()) {
          reference = frame;
        } else {
          CHECK(frame == reference);
        }
      }
    }
  }
}

TEST_CASE("separability control: same identity and camera pool identically") {
  DatasetConfig c = small_config();
  c.noise_scale = 0.0;
  c.camera_scale = 0.8;
  Dataset ds = generate(c);
  for (std::size_t i = 0; i < ds.train_clips.size(); ++i) {
    for (std::size_t j = i + 1; j < ds.train_clips.size(); ++j) {
      const ClipSample& a = ds.train_clips[i];
      const ClipSample& b = ds.train_clips[j];
      if (a.identity == b.identity && a.camera == b.camera) {
        CHECK(clip_mean(a) == clip_mean(b));
      }
    }
  }
}

TEST_CASE("config validation rejects a rank-losing mixing matrix") {
  DatasetConfig c = small_config();
  c.frame_dim = 2;  // below latent_dim
  CHECK_THROWS_AS(generate(c), ConfigError);
}

TEST_CASE("sample_pk_batch shape, determinism, and exhaustion") {
  Dataset ds = generate(small_config());
  BatchSpec spec;
  spec.identities_per_batch = 4;
  spec.clips_per_identity = 2;
  spec.teacher_views = 4;
  spec.student_views = 1;

  Rng rng_a(5);
  auto batch = sample_pk_batch(ds, spec, rng_a);
  REQUIRE(batch.size() == 8);
  std::map<std::uint32_t, int> counts;
  for (const ClipSample& clip : batch) ++counts[clip.identity];
  CHECK(counts.size() == 4);
  for (const auto& [id, n] : counts) CHECK(n == 2);

  Rng rng_b(5);
  auto batch_b = sample_pk_batch(ds, spec, rng_b);
  CHECK(batch == batch_b);

  // P = total identities: every identity appears exactly once per group
  spec.identities_per_batch = 6;
  Rng rng_c(11);
  auto full = sample_pk_batch(ds, spec, rng_c);
  std::map<std::uint32_t, int> full_counts;
  for (const ClipSample& clip : full) ++full_counts[clip.identity];
  CHECK(full_counts.size() == 6);

  spec.identities_per_batch = 7;  // more than available
  Rng rng_d(13);
  CHECK_THROWS_AS(sample_pk_batch(ds, spec, rng_d), UsageError);
}

TEST_CASE("subset_views records provenance and respects bounds") {
  Dataset ds = generate(small_config());
  const ClipSample& clip = ds.train_clips.front();

  Rng rng(3);
  ClipSample full = subset_views(clip, clip.n_frames, rng);
  CHECK(full.n_frames == clip.n_frames);
  std::set<std::uint32_t> indices(full.source_frames.begin(), full.source_frames.end());
  CHECK(indices.size() == clip.n_frames);  // a permutation of all frames

  ClipSample one = subset_views(clip, 1, rng);
  CHECK(one.n_frames == 1);
  CHECK(one.frames.size() == clip.frame_dim);

  for (int trial = 0; trial < 1000; ++trial) {
    ClipSample two = subset_views(clip, 2, rng);
    REQUIRE(two.source_frames.size() == 2);
    CHECK(two.source_frames[0] != two.source_frames[1]);
    CHECK(two.source_frames[0] < clip.n_frames);
    CHECK(two.source_frames[1] < clip.n_frames);
    // frames match the recorded source indices
    for (int v = 0; v < 2; ++v) {
      const std::uint32_t src = two.source_frames[v];
      for (std::uint32_t d = 0; d < clip.frame_dim; ++d) {
        CHECK(two.frames[v * clip.frame_dim + d] == clip.frames[src * clip.frame_dim + d]);
      }
    }
  }

  CHECK_THROWS_AS(subset_views(clip, clip.n_frames + 1, rng), ConfigError);
}

TEST_CASE("nested subsetting composes provenance to original frames") {
  Dataset ds = generate(small_config());
  const ClipSample& clip = ds.train_clips.front();
  Rng rng(7);
  ClipSample first = subset_views(clip, 3, rng);
  ClipSample second = subset_views(first, 2, rng);
  std::set<std::uint32_t> outer(first.source_frames.begin(), first.source_frames.end());
  for (std::uint32_t src : second.source_frames) {
    CHECK(outer.contains(src));  // student frames come from the teacher's set
  }
}

TEST_CASE("save/load round trip is bit-identical") {
  Dataset ds = generate(small_config());
  const std::string path = temp_path("mdkt_dataset_roundtrip.bin");
  save(ds, path);
  Dataset loaded = load(path);
  CHECK(loaded == ds);

  // identical bytes when saved again
  const std::string path2 = temp_path("mdkt_dataset_roundtrip2.bin");
  save(loaded, path2);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("malformed dataset files are rejected with a byte offset") {
  Dataset ds = generate(small_config());
  const std::string path = temp_path("mdkt_dataset_bad.bin");
  save(ds, path);

  SUBCASE("truncation") {
    const auto full_size = fs::file_size(path);
    fs::resize_file(path, full_size / 2);
    CHECK_THROWS_AS(load(path), FormatError);
    CHECK_THROWS_WITH_AS(load(path), doctest::Contains("at byte"), FormatError);
  }

  SUBCASE("version mismatch") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char bad_version = 9;
    f.write(&bad_version, 1);
    f.close();
    CHECK_THROWS_WITH_AS(load(path), doctest::Contains("unsupported version"), FormatError);
  }

  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXXXXXX", 8);
    f.close();
    CHECK_THROWS_WITH_AS(load(path), doctest::Contains("magic"), FormatError);
  }

  fs::remove(path);
}

TEST_CASE("batch spec invariants") {
  BatchSpec spec;
  spec.identities_per_batch = 2;
  spec.clips_per_identity = 2;
  spec.teacher_views = 4;
  spec.student_views = 2;
  CHECK_NOTHROW(spec.validate(8));

  spec.student_views = 4;  // M must stay below N
  CHECK_THROWS_AS(spec.validate(8), ConfigError);
  spec.student_views = 2;
  spec.teacher_views = 9;  // N above T
  CHECK_THROWS_AS(spec.validate(8), ConfigError);
  spec.teacher_views = 4;
  spec.identities_per_batch = 1;
  CHECK_THROWS_AS(spec.validate(8), ConfigError);
}
