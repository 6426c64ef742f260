#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rng.hpp"

namespace mdkt {

// Generator parameters for the synthetic multi-view identity corpus:
// identities x cameras x clips x frames, with train/test identity sets
// disjoint by construction.
struct DatasetConfig {
  std::uint32_t n_train_ids = 50;
  std::uint32_t n_test_ids = 20;
  std::uint32_t n_cameras = 4;
  std::uint32_t frames_per_clip = 8;  // T
  std::uint32_t clips_per_id_per_camera = 2;
  std::uint32_t latent_dim = 16;
  std::uint32_t frame_dim = 64;
  double identity_scale = 1.0;
  double camera_scale = 0.6;
  double noise_scale = 0.4;
  std::uint64_t seed = 1;

  void validate() const;
};

// One identity's multi-frame observation. Frames are feature vectors stored
// row-major [n_frames x frame_dim]. When the clip was produced by view
// subsetting, source_frames holds the originating frame indices so teacher
// and student inputs provably share provenance.
struct ClipSample {
  std::uint32_t identity = 0;
  std::uint32_t camera = 0;
  std::uint32_t n_frames = 0;
  std::uint32_t frame_dim = 0;
  std::vector<double> frames;
  std::vector<std::uint32_t> source_frames;

  bool operator==(const ClipSample&) const = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<ClipSample> train_clips;
  std::vector<ClipSample> test_clips;

  std::vector<std::uint32_t> train_identities() const;
  std::vector<std::uint32_t> test_identities() const;

  bool operator==(const Dataset&) const = default;
};

// PK batch composition plus the asymmetric view counts of the two-stage
// protocol: the teacher reads N frames per clip, the student a subset of M.
struct BatchSpec {
  std::uint32_t identities_per_batch = 8;  // P
  std::uint32_t clips_per_identity = 2;    // K
  std::uint32_t teacher_views = 8;         // N
  std::uint32_t student_views = 2;         // M

  void validate(std::uint32_t frames_per_clip) const;
};

// Deterministic in config (including seed); frame = Mix (id_scale*mu_id +
// cam_scale*c_cam) + noise_scale*eps with standard-normal draws and a fixed
// seeded latent_dim -> frame_dim mixing matrix.
Dataset generate(const DatasetConfig& config);

// Exactly P distinct identities with K clips each, order deterministic in
// the rng state.
std::vector<ClipSample> sample_pk_batch(const Dataset& dataset, const BatchSpec& spec, Rng& rng);
std::vector<ClipSample> sample_pk_batch(const std::vector<ClipSample>& clips,
                                        std::uint32_t identities_per_batch,
                                        std::uint32_t clips_per_identity, Rng& rng);

// M frames drawn uniformly without replacement; the selected index set is
// recorded in source_frames (composed through any previous subsetting).
ClipSample subset_views(const ClipSample& clip, std::uint32_t m, Rng& rng);

void save(const Dataset& dataset, const std::string& path);
Dataset load(const std::string& path);

}  // namespace mdkt
