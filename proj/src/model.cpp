#include "model.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "rng.hpp"

namespace mdkt {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'K', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kVersion = 1;

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(fan_in * fan_out);
  for (double& v : data) v = (rng.uniform() * 2.0 - 1.0) * bound;
  return Tensor::from_data({fan_in, fan_out}, std::move(data), true);
}

}  // namespace

void ModelConfig::validate() const {
  if (layer_dims.size() < 3) {
    throw ConfigError("model: layer_dims needs input, at least one hidden, and embedding dims");
  }
  for (std::uint32_t d : layer_dims) {
    if (d < 1) throw ConfigError("model: layer dims must be >= 1");
  }
  if (embedding_dim() < 2) throw ConfigError("model: embedding_dim must be >= 2");
  if (n_classes < 1) throw ConfigError("model: n_classes must be >= 1");
}

EmbeddingNet EmbeddingNet::init(const ModelConfig& config) {
  config.validate();
  EmbeddingNet net;
  net.config_ = config;
  for (std::size_t i = 0; i + 1 < config.layer_dims.size(); ++i) {
    Rng rng(derive_seed(config.init_seed, i));
    Layer layer;
    layer.weight = glorot_uniform(config.layer_dims[i], config.layer_dims[i + 1], rng);
    layer.bias = Tensor::zeros({config.layer_dims[i + 1]}, true);
    net.layers_.push_back(std::move(layer));
  }
  Rng rng(derive_seed(config.init_seed, config.layer_dims.size()));
  net.head_.weight = glorot_uniform(config.embedding_dim(), config.n_classes, rng);
  net.head_.bias = Tensor::zeros({config.n_classes}, true);
  return net;
}

std::vector<Tensor> EmbeddingNet::parameters() {
  std::vector<Tensor> params;
  for (Layer& layer : layers_) {
    params.push_back(layer.weight);
    params.push_back(layer.bias);
  }
  params.push_back(head_.weight);
  params.push_back(head_.bias);
  return params;
}

std::size_t EmbeddingNet::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& layer : layers_) n += layer.weight.numel() + layer.bias.numel();
  return n + head_.weight.numel() + head_.bias.numel();
}

void EmbeddingNet::zero_grad() {
  for (Tensor& p : parameters()) p.zero_grad();
}

EmbeddingNet EmbeddingNet::clone() const {
  EmbeddingNet copy;
  copy.config_ = config_;
  auto copy_layer = [](const Layer& l) {
    Layer out;
    out.weight = Tensor::from_data(l.weight.shape(),
                                   {l.weight.data().begin(), l.weight.data().end()}, true);
    out.bias =
        Tensor::from_data(l.bias.shape(), {l.bias.data().begin(), l.bias.data().end()}, true);
    return out;
  };
  for (const Layer& l : layers_) copy.layers_.push_back(copy_layer(l));
  copy.head_ = copy_layer(head_);
  return copy;
}

Tensor EmbeddingNet::embed_frames(Tape* tape, const Tensor& frames) const {
  if (frames.rank() != 2 || frames.cols() != config_.frame_dim()) {
    throw ShapeError("embed_frames: expected [n x " + std::to_string(config_.frame_dim()) +
                     "] input");
  }
  Tensor x = frames;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = add_rowvec(tape, matmul(tape, x, layers_[i].weight), layers_[i].bias);
    if (i + 1 < layers_.size()) x = relu(tape, x);
  }
  if (config_.normalize_embeddings) {
    Tensor sq_norms = sum_rowwise(tape, mul(tape, x, x));
    Tensor inv_norms = pow_scalar(tape, add_scalar(tape, sq_norms, 1e-12), -0.5);
    x = scale_rows(tape, x, inv_norms);
  }
  return x;
}

Tensor EmbeddingNet::video_representation(Tape* tape, const Tensor& frame_embeddings) {
  if (frame_embeddings.rank() != 2 || frame_embeddings.rows() == 0) {
    throw ShapeError("video_representation: expected non-empty [T x d] input");
  }
  return mean_colwise(tape, frame_embeddings);
}

Tensor EmbeddingNet::logits(Tape* tape, const Tensor& clip_embedding) const {
  const bool single = clip_embedding.rank() == 1;
  Tensor x = single
                 ? reshape(tape, clip_embedding, {1, clip_embedding.shape()[0]})
                 : clip_embedding;
  if (x.cols() != config_.embedding_dim()) {
    throw ShapeError("logits: embedding dim mismatch");
  }
  Tensor out = add_rowvec(tape, matmul(tape, x, head_.weight), head_.bias);
  if (single) out = reshape(tape, out, {config_.n_classes});
  return out;
}

Tensor EmbeddingNet::clip_representations(Tape* tape,
                                          const std::vector<ClipSample>& clips) const {
  if (clips.empty()) throw ShapeError("clip_representations: empty batch");
  // one embedding pass over every frame in the batch
  std::vector<double> all_frames;
  std::size_t total_frames = 0;
  for (const ClipSample& clip : clips) total_frames += clip.n_frames;
  all_frames.reserve(total_frames * config_.frame_dim());
  for (const ClipSample& clip : clips) {
    if (clip.frame_dim != config_.frame_dim()) {
      throw ShapeError("clip_representations: clip frame_dim mismatch");
    }
    all_frames.insert(all_frames.end(), clip.frames.begin(), clip.frames.end());
  }
  Tensor frames =
      Tensor::from_data({total_frames, config_.frame_dim()}, std::move(all_frames), false);
  Tensor embedded = embed_frames(tape, frames);

  std::vector<Tensor> reps;
  reps.reserve(clips.size());
  std::size_t row = 0;
  for (const ClipSample& clip : clips) {
    std::vector<std::size_t> rows(clip.n_frames);
    for (std::uint32_t t = 0; t < clip.n_frames; ++t) rows[t] = row + t;
    row += clip.n_frames;
    reps.push_back(video_representation(tape, row_select(tape, embedded, rows)));
  }
  return concat_rows(tape, reps);
}

void save_checkpoint(const EmbeddingNet& net, const std::string& path) {
  ByteWriter w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.u8(kVersion);
  const ModelConfig& c = net.config_;
  w.u32(static_cast<std::uint32_t>(c.layer_dims.size()));
  for (std::uint32_t d : c.layer_dims) w.u32(d);
  w.u32(c.n_classes);
  w.u64(c.init_seed);
  w.u8(c.normalize_embeddings ? 1 : 0);
  for (const EmbeddingNet::Layer* layer : [&] {
         std::vector<const EmbeddingNet::Layer*> all;
         for (const auto& l : net.layers_) all.push_back(&l);
         all.push_back(&net.head_);
         return all;
       }()) {
    w.f64_array(layer->weight.data());
    w.f64_array(layer->bias.data());
  }
  w.finish();
}

EmbeddingNet load_checkpoint(const std::string& path) {
  ByteReader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic)) r.fail("bad magic, not a checkpoint file");
  const std::uint8_t version = r.u8();
  if (version != kVersion) {
    r.fail("unsupported version " + std::to_string(version) + ", expected " +
           std::to_string(kVersion));
  }

  ModelConfig c;
  const std::uint32_t n_dims = r.u32();
  if (n_dims < 3 || n_dims > 64) r.fail("implausible layer count");
  c.layer_dims.resize(n_dims);
  for (std::uint32_t& d : c.layer_dims) d = r.u32();
  c.n_classes = r.u32();
  c.init_seed = r.u64();
  c.normalize_embeddings = r.u8() != 0;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid stored config: ") + e.what());
  }

  EmbeddingNet net = EmbeddingNet::init(c);
  for (Tensor& p : net.parameters()) {
    r.f64_array(p.mutable_data());
  }
  r.expect_eof();
  return net;
}

}  // namespace mdkt
