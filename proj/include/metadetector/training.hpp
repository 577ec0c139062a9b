#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "metadetector/autodiff.hpp"
#include "metadetector/mmd.hpp"
#include "metadetector/model.hpp"
#include "metadetector/random.hpp"
#include "metadetector/text.hpp"

namespace metadet::train {

enum class WeightingOverride { kAuto, kAlwaysOn, kAlwaysOff };

const char* to_string(WeightingOverride w);
// Accepts "auto", "always_on"/"on", "always_off"/"off".
WeightingOverride parse_weighting(const std::string& s);

struct TrainConfig {
  double lambda = 1.0;
  double mu = 1.0;
  double d_star = mmd::kDefaultDStar;
  double lr = 0.01;
  std::size_t batch_size = 100;  // half source, half target
  std::size_t epochs = 100;
  double dropout = 0.2;
  std::uint64_t seed = 0;
  bool freeze_embeddings = false;
  WeightingOverride weighting_override = WeightingOverride::kAuto;

  // Architecture and text pipeline.
  std::size_t embedding_dim = 32;
  std::size_t num_filters = 20;
  std::size_t max_window = 4;
  std::size_t max_len = 0;  // 0: choose_k over the training corpora
  double length_quantile = 0.95;
  std::size_t min_count = 1;
  std::string pretrained_vectors;  // empty: random initialization

  void validate() const;
};

// Flat key/value JSON object whose keys are the TrainConfig field names.
nlohmann::ordered_json config_to_json(const TrainConfig& c);
TrainConfig config_from_json(const nlohmann::json& j,
                             TrainConfig base = TrainConfig{});
TrainConfig load_config(const std::filesystem::path& path,
                        TrainConfig base = TrainConfig{});

struct WeightVector {
  enum class Mode { kGatedWeights, kAllOnes };
  std::vector<double> values;
  Mode mode = Mode::kAllOnes;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss_yw = 0.0;
  double loss_ew = 0.0;
  double loss_pe = 0.0;
  double source_accuracy = 0.0;
  std::optional<double> target_accuracy;
  double weight_mean = 1.0;
  double weight_min = 1.0;
  double weight_max = 1.0;
};

using TrainHistory = std::vector<EpochRecord>;

inline constexpr double kProbEps = 1e-12;

// mean_i −w_i·log p(y_i); probs is [B×2] with columns (fake, real).
ad::Var loss_detection_weighted(ad::Graph& g, ad::Var probs,
                                std::span<const int> labels,
                                std::span<const double> weights);

// −[mean_s w·log ê_s + mean_t log(1 − ê_t)]; weights touch the source term.
ad::Var loss_event_weighted(ad::Graph& g, ad::Var src_probs, ad::Var tgt_probs,
                            std::span<const double> weights);

// Unweighted event cross-entropy for the pseudo-event head.
ad::Var loss_pseudo(ad::Graph& g, ad::Var src_probs, ad::Var tgt_probs);

// 1 − ŵ when weighting is active (gate open or forced on), all ones
// otherwise. ŵ is clamped into [ε, 1−ε] first.
WeightVector compute_weights(std::span<const double> pseudo_probs,
                             bool gate_open, WeightingOverride override);

// L_yw + μ·L_pe + L_ew. The −λ on the event term is applied to G_f by the
// gradient reversal inside discriminate_event.
ad::Var total_loss(ad::Graph& g, ad::Var loss_yw, ad::Var loss_pe,
                   ad::Var loss_ew, double mu);

struct Batch {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

// One epoch of half/half batches. Both corpora are reshuffled; whichever
// stream runs out first is cycled with a fresh shuffle.
std::vector<Batch> make_batches(std::size_t n_source, std::size_t n_target,
                                std::size_t batch_size, std::mt19937_64& rng);

// θ ← θ − lr·∇θ, then zero the gradients.
void sgd_step(std::span<ad::Tensor* const> params, double lr);

struct StepInput {
  std::span<const std::int32_t> source_ids;  // [B_s×k]
  std::span<const std::int32_t> target_ids;  // [B_t×k]
  std::span<const int> source_labels;
};

struct StepResult {
  double loss_yw = 0.0;
  double loss_ew = 0.0;
  double loss_pe = 0.0;
  std::size_t source_correct = 0;
  WeightVector weights;
};

// One forward/backward/SGD update on a half/half batch.
StepResult train_step(model::ModelParams& params, const StepInput& batch,
                      const TrainConfig& config, bool gate_open,
                      std::uint64_t graph_seed);

// Vocabulary over both corpora, padded length k, initial embedding table and
// the shift report measured on it. train() starts from exactly this.
struct PreparedData {
  text::Vocabulary vocab;
  std::size_t k = 0;
  text::EmbeddingTable table;
  mmd::ShiftReport shift;
};

PreparedData prepare(const text::EventCorpus& source,
                     const text::EventCorpus& target,
                     const TrainConfig& config);

struct TrainResult {
  model::ModelParams params;
  TrainHistory history;
  mmd::ShiftReport shift;
  // Highest target accuracy epoch; only when target labels were available.
  std::optional<model::ModelParams> best_params;
  std::size_t best_epoch = 0;
};

// Joint min-max training. Target labels, if present, are used only for the
// per-epoch validation accuracy.
TrainResult train(const text::EventCorpus& source,
                  const text::EventCorpus& target, const TrainConfig& config);

std::string history_csv(const TrainHistory& history);
void write_history_csv(const std::filesystem::path& path,
                       const TrainHistory& history);

}  // namespace metadet::train
