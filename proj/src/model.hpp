#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "tensor.hpp"

namespace mdkt {

struct ModelConfig {
  // input dim -> hidden dims -> embedding dim; at least one hidden layer
  std::vector<std::uint32_t> layer_dims = {64, 64, 32};
  std::uint32_t n_classes = 50;
  std::uint64_t init_seed = 1;
  // L2-normalize embedding rows; off by default since the losses operate on
  // unnormalized squared distances
  bool normalize_embeddings = false;

  void validate() const;
  std::uint32_t frame_dim() const { return layer_dims.front(); }
  std::uint32_t embedding_dim() const { return layer_dims.back(); }
};

// Feed-forward embedding network with ReLU between hidden layers, a linear
// final embedding layer, and an affine classifier head.
class EmbeddingNet {
 public:
  struct Layer {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
  };

  EmbeddingNet() = default;

  // Glorot-uniform weights, zero biases, deterministic in init_seed.
  static EmbeddingNet init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<Tensor> parameters();  // affine layers in order, then the head
  std::size_t parameter_count() const;
  void zero_grad();

  EmbeddingNet clone() const;

  // [n x frame_dim] -> [n x embedding_dim], differentiable on the tape
  Tensor embed_frames(Tape* tape, const Tensor& frames) const;
  // temporal average pooling: [T x d] -> [d]
  static Tensor video_representation(Tape* tape, const Tensor& frame_embeddings);
  // classifier head; accepts [d] -> [n_classes] or [B x d] -> [B x n_classes]
  Tensor logits(Tape* tape, const Tensor& clip_embedding) const;

  // embed all frames, pool per clip: returns [B x embedding_dim]
  Tensor clip_representations(Tape* tape, const std::vector<ClipSample>& clips) const;

  friend void save_checkpoint(const EmbeddingNet& net, const std::string& path);
  friend EmbeddingNet load_checkpoint(const std::string& path);

 private:
  ModelConfig config_;
  std::vector<Layer> layers_;  // hidden + embedding layers
  Layer head_;                 // embedding_dim -> n_classes
};

void save_checkpoint(const EmbeddingNet& net, const std::string& path);
EmbeddingNet load_checkpoint(const std::string& path);

}  // namespace mdkt
