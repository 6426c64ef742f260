#include "dataset.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "binary_io.hpp"
#include "error.hpp"

namespace mdkt {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'K', 'T', 'D', 'A', 'T', 'A'};
constexpr std::uint8_t kVersion = 1;

enum SeedStream : std::uint64_t {
  kMixStream = 1,
  kIdentityStream = 2,
  kCameraStream = 3,
  kNoiseStream = 4,
};

std::vector<double> gaussian_vector(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.gaussian();
  return v;
}

}  // namespace

void DatasetConfig::validate() const {
  if (n_train_ids < 1 || n_test_ids < 1) throw ConfigError("dataset: id counts must be >= 1");
  if (n_cameras < 1) throw ConfigError("dataset: n_cameras must be >= 1");
  if (frames_per_clip < 1) throw ConfigError("dataset: frames_per_clip must be >= 1");
  if (clips_per_id_per_camera < 1) {
    throw ConfigError("dataset: clips_per_id_per_camera must be >= 1");
  }
  if (latent_dim < 1 || frame_dim < 1) throw ConfigError("dataset: dims must be >= 1");
  if (frame_dim < latent_dim) {
    throw ConfigError("dataset: frame_dim must be >= latent_dim (mixing must not lose rank)");
  }
  if (identity_scale < 0 || camera_scale < 0 || noise_scale < 0) {
    throw ConfigError("dataset: scales must be non-negative");
  }
}

void BatchSpec::validate(std::uint32_t frames_per_clip) const {
  if (identities_per_batch < 2) throw ConfigError("batch: P must be >= 2");
  if (clips_per_identity < 2) throw ConfigError("batch: K must be >= 2");
  if (student_views < 1) throw ConfigError("batch: M must be >= 1");
  if (teacher_views <= student_views) throw ConfigError("batch: N must exceed M");
  if (teacher_views > frames_per_clip) throw ConfigError("batch: N must not exceed T");
}

std::vector<std::uint32_t> Dataset::train_identities() const {
  std::set<std::uint32_t> ids;
  for (const auto& c : train_clips) ids.insert(c.identity);
  return {ids.begin(), ids.end()};
}

std::vector<std::uint32_t> Dataset::test_identities() const {
  std::set<std::uint32_t> ids;
  for (const auto& c : test_clips) ids.insert(c.identity);
  return {ids.begin(), ids.end()};
}

Dataset generate(const DatasetConfig& config) {
  config.validate();

  const std::size_t fd = config.frame_dim;
  const std::size_t ld = config.latent_dim;

  // fixed seeded mixing matrix, row-major [frame_dim x latent_dim]
  const std::vector<double> mix =
      gaussian_vector(derive_seed(config.seed, kMixStream), fd * ld);

  std::vector<std::vector<double>> camera_latents(config.n_cameras);
  for (std::uint32_t cam = 0; cam < config.n_cameras; ++cam) {
    camera_latents[cam] = gaussian_vector(derive_seed(config.seed, kCameraStream, cam), ld);
  }

  Dataset out;
  out.config = config;

  const std::uint32_t total_ids = config.n_train_ids + config.n_test_ids;
  std::uint64_t clip_counter = 0;
  for (std::uint32_t id = 0; id < total_ids; ++id) {
    const bool is_test = id >= config.n_train_ids;
    const std::vector<double> mu =
        gaussian_vector(derive_seed(config.seed, kIdentityStream, id), ld);
    for (std::uint32_t cam = 0; cam < config.n_cameras; ++cam) {
      // latent signal shared by every frame of every clip at this (id, cam)
      std::vector<double> latent(ld);
      for (std::size_t l = 0; l < ld; ++l) {
        latent[l] = config.identity_scale * mu[l] + config.camera_scale * camera_latents[cam][l];
      }
      std::vector<double> base(fd, 0.0);
      for (std::size_t o = 0; o < fd; ++o) {
        double acc = 0.0;
        for (std::size_t l = 0; l < ld; ++l) acc += mix[o * ld + l] * latent[l];
        base[o] = acc;
      }
      for (std::uint32_t k = 0; k < config.clips_per_id_per_camera; ++k) {
        Rng noise(derive_seed(config.seed, kNoiseStream, clip_counter));
        ++clip_counter;
        ClipSample clip;
        clip.identity = id;
        clip.camera = cam;
        clip.n_frames = config.frames_per_clip;
        clip.frame_dim = config.frame_dim;
        clip.frames.resize(static_cast<std::size_t>(clip.n_frames) * fd);
        for (std::uint32_t t = 0; t < clip.n_frames; ++t) {
          for (std::size_t o = 0; o < fd; ++o) {
            clip.frames[t * fd + o] = base[o] + config.noise_scale * noise.gaussian();
          }
        }
        (is_test ? out.test_clips : out.train_clips).push_back(std::move(clip));
      }
    }
  }
  return out;
}

std::vector<ClipSample> sample_pk_batch(const std::vector<ClipSample>& clips,
                                        std::uint32_t identities_per_batch,
                                        std::uint32_t clips_per_identity, Rng& rng) {
  std::map<std::uint32_t, std::vector<std::size_t>> by_identity;
  for (std::size_t i = 0; i < clips.size(); ++i) by_identity[clips[i].identity].push_back(i);

  std::vector<std::uint32_t> eligible;
  for (const auto& [id, members] : by_identity) {
    if (members.size() >= clips_per_identity) eligible.push_back(id);
  }
  if (eligible.size() < identities_per_batch) {
    throw UsageError("sample_pk_batch: not enough identities with " +
                     std::to_string(clips_per_identity) + " clips");
  }

  rng.shuffle(eligible);
  eligible.resize(identities_per_batch);

  std::vector<ClipSample> batch;
  batch.reserve(static_cast<std::size_t>(identities_per_batch) * clips_per_identity);
  for (std::uint32_t id : eligible) {
    const auto& members = by_identity[id];
    const auto picks = rng.sample_without_replacement(members.size(), clips_per_identity);
    for (std::size_t p : picks) batch.push_back(clips[members[p]]);
  }
  return batch;
}

std::vector<ClipSample> sample_pk_batch(const Dataset& dataset, const BatchSpec& spec, Rng& rng) {
  spec.validate(dataset.config.frames_per_clip);
  return sample_pk_batch(dataset.train_clips, spec.identities_per_batch, spec.clips_per_identity,
                         rng);
}

ClipSample subset_views(const ClipSample& clip, std::uint32_t m, Rng& rng) {
  if (m == 0) throw ConfigError("subset_views: view count must be >= 1");
  if (m > clip.n_frames) {
    throw ConfigError("subset_views: requested " + std::to_string(m) + " views from a clip with " +
                      std::to_string(clip.n_frames) + " frames");
  }
  const auto picks = rng.sample_without_replacement(clip.n_frames, m);

  ClipSample out;
  out.identity = clip.identity;
  out.camera = clip.camera;
  out.n_frames = m;
  out.frame_dim = clip.frame_dim;
  out.frames.reserve(static_cast<std::size_t>(m) * clip.frame_dim);
  out.source_frames.reserve(m);
  for (std::size_t pick : picks) {
    const auto begin = clip.frames.begin() + static_cast<std::ptrdiff_t>(pick * clip.frame_dim);
    out.frames.insert(out.frames.end(), begin, begin + clip.frame_dim);
    // compose provenance through earlier subsetting
    out.source_frames.push_back(clip.source_frames.empty()
                                    ? static_cast<std::uint32_t>(pick)
                                    : clip.source_frames[pick]);
  }
  return out;
}

void save(const Dataset& dataset, const std::string& path) {
  ByteWriter w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.u8(kVersion);

  const DatasetConfig& c = dataset.config;
  w.u32(c.n_train_ids);
  w.u32(c.n_test_ids);
  w.u32(c.n_cameras);
  w.u32(c.frames_per_clip);
  w.u32(c.clips_per_id_per_camera);
  w.u32(c.latent_dim);
  w.u32(c.frame_dim);
  w.f64(c.identity_scale);
  w.f64(c.camera_scale);
  w.f64(c.noise_scale);
  w.u64(c.seed);

  // frames grouped by clip: all train clips then all test clips
  for (const auto* clips : {&dataset.train_clips, &dataset.test_clips}) {
    for (const ClipSample& clip : *clips) w.f64_array(clip.frames);
  }
  // label table: identity, camera, split flag per clip
  for (const auto* clips : {&dataset.train_clips, &dataset.test_clips}) {
    for (const ClipSample& clip : *clips) {
      w.u32(clip.identity);
      w.u32(clip.camera);
      w.u8(clips == &dataset.test_clips ? 1 : 0);
    }
  }
  w.finish();
}

Dataset load(const std::string& path) {
  ByteReader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic)) r.fail("bad magic, not a dataset file");
  const std::uint8_t version = r.u8();
  if (version != kVersion) {
    r.fail("unsupported version " + std::to_string(version) + ", expected " +
           std::to_string(kVersion));
  }

  DatasetConfig c;
  c.n_train_ids = r.u32();
  c.n_test_ids = r.u32();
  c.n_cameras = r.u32();
  c.frames_per_clip = r.u32();
  c.clips_per_id_per_camera = r.u32();
  c.latent_dim = r.u32();
  c.frame_dim = r.u32();
  c.identity_scale = r.f64();
  c.camera_scale = r.f64();
  c.noise_scale = r.f64();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid stored config: ") + e.what());
  }

  const std::size_t clips_per_id =
      static_cast<std::size_t>(c.n_cameras) * c.clips_per_id_per_camera;
  const std::size_t n_train = c.n_train_ids * clips_per_id;
  const std::size_t n_test = c.n_test_ids * clips_per_id;
  const std::size_t frame_values = static_cast<std::size_t>(c.frames_per_clip) * c.frame_dim;

  std::vector<std::vector<double>> frames(n_train + n_test);
  for (auto& clip_frames : frames) {
    clip_frames.resize(frame_values);
    r.f64_array(clip_frames);
  }

  Dataset out;
  out.config = c;
  out.train_clips.reserve(n_train);
  out.test_clips.reserve(n_test);
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    ClipSample clip;
    clip.identity = r.u32();
    clip.camera = r.u32();
    const std::uint8_t split = r.u8();
    if (split > 1) r.fail("split flag must be 0 or 1");
    if ((split == 1) != (i >= n_train)) r.fail("split flag disagrees with clip ordering");
    clip.n_frames = c.frames_per_clip;
    clip.frame_dim = c.frame_dim;
    clip.frames = std::move(frames[i]);
    (split == 1 ? out.test_clips : out.train_clips).push_back(std::move(clip));
  }
  r.expect_eof();

  // train/test identity sets must be disjoint
  const auto train_ids = out.train_identities();
  for (std::uint32_t id : out.test_identities()) {
    if (std::binary_search(train_ids.begin(), train_ids.end(), id)) {
      r.fail("train and test identity sets overlap");
    }
  }
  return out;
}

}  // namespace mdkt
