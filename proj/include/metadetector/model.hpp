#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metadetector/autodiff.hpp"
#include "metadetector/text.hpp"

namespace metadet::model {

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 32;  // d
  std::size_t max_len = 0;         // k
  std::size_t num_filters = 20;    // n_c per window size
  std::size_t max_window = 4;      // window sizes 1..max_window
  std::size_t feature_dim = 32;    // width of ĉ
  std::size_t disc_hidden = 32;

  std::size_t pooled_dim() const { return max_window * num_filters; }
};

// y = x·weight + bias with weight stored [in×out].
struct Linear {
  ad::Tensor weight;
  ad::Tensor bias;
};

struct ConvBank {
  std::size_t window = 0;
  ad::Tensor filters;  // [n_c×d×h]
  ad::Tensor bias;     // [n_c]
};

struct FeatureExtractorParams {
  text::EmbeddingTable embedding;
  std::vector<ConvBank> banks;
  Linear fc;
};

struct DetectorParams {
  Linear fc;  // feature_dim → 2, columns (fake, real)
};

// Shared architecture of the event and pseudo-event discriminators.
struct DiscriminatorParams {
  Linear hidden;  // feature_dim → disc_hidden, ReLU
  Linear out;     // disc_hidden → 1, sigmoid
};

struct ModelParams {
  ModelDims dims;
  text::Vocabulary vocab;
  FeatureExtractorParams extractor;
  DetectorParams detector;
  DiscriminatorParams event;
  DiscriminatorParams pseudo;
  std::uint64_t seed = 0;

  // Every tensor in a fixed order with a stable name (checkpoint layout).
  std::vector<std::pair<std::string, ad::Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const ad::Tensor*>> named_tensors() const;
  // Tensors updated by SGD (the embedding table only when trainable).
  std::vector<ad::Tensor*> trainable();
  std::size_t trainable_count() const;
  void zero_grad();
};

// Trainable scalar count as a pure function of the dimensions.
std::size_t expected_parameter_count(const ModelDims& dims,
                                     bool embeddings_trainable);

// Glorot-uniform weights, zero biases. The embedding table is supplied by
// the caller (random or pretrained) and its trainable flag is honoured.
ModelParams init_params(ModelDims dims, text::Vocabulary vocab,
                        text::EmbeddingTable embedding, std::uint64_t seed);

// ids is row-major [batch×k]; result [batch×d×k].
ad::Var embed_batch(ad::Graph& g, FeatureExtractorParams& fe,
                    std::span<const std::int32_t> ids, std::size_t batch);

// [B×d×k] → [B×feature_dim]: per window size conv → max-pool, concatenate,
// dropout (training only), fully connected, ReLU.
ad::Var extract_features(ad::Graph& g, FeatureExtractorParams& fe,
                         ad::Var embedded, bool training, double dropout_rate);

// [B×feature_dim] → [B×2] class probabilities (fake, real).
ad::Var detect(ad::Graph& g, DetectorParams& det, ad::Var features);

// Two-layer head without any gradient manipulation. [B×feature_dim] → [B]
ad::Var discriminator_head(ad::Graph& g, DiscriminatorParams& disc,
                           ad::Var features);

// Source-origin probability behind a gradient reversal of gain lambda.
ad::Var discriminate_event(ad::Graph& g, DiscriminatorParams& disc,
                           ad::Var features, double lambda);

// Source-origin probability on detached features; never updates G_f.
ad::Var pseudo_discriminate(ad::Graph& g, DiscriminatorParams& disc,
                            ad::Var features);

// Inference-mode outputs for a whole encoded corpus.
struct Inference {
  std::vector<double> probs;   // [n×2]
  std::vector<double> pseudo;  // [n], ŵ
};

Inference infer(ModelParams& params, std::span<const std::int32_t> ids,
                std::size_t n, std::size_t chunk = 256);

}  // namespace metadet::model
