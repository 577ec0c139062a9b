#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "metadetector/model.hpp"
#include "metadetector/text.hpp"

namespace metadet::eval {

// One-vs-rest scores of a single class.
struct ClassMetrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the corresponding denominator was zero and 0 was reported.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::size_t n_evaluated = 0;
  ClassMetrics fake;
  ClassMetrics real;

  const ClassMetrics& of(text::Label l) const {
    return l == text::Label::kFake ? fake : real;
  }
};

ClassMetrics class_metrics(std::size_t tp, std::size_t fp, std::size_t tn,
                           std::size_t fn);

// Predictions and labels use the Label encoding (0 fake, 1 real).
MetricsReport metrics_from_predictions(std::span<const int> predicted,
                                       std::span<const int> labels);

// Argmax of the detector over every post; dropout off.
std::vector<int> predict(model::ModelParams& params,
                         const text::EventCorpus& corpus);

// Throws ContractError naming the first unlabeled post.
MetricsReport evaluate(model::ModelParams& params,
                       const text::EventCorpus& test);

struct WeightEntry {
  std::string post_id;
  std::string excerpt;
  double weight = 0.0;  // 1 − pseudo
  double pseudo = 0.0;  // ŵ
};

struct WeightSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::array<double, 9> deciles{};  // 10th..90th percentiles
};

struct WeightRanking {
  std::vector<WeightEntry> top;     // highest weights, descending
  std::vector<WeightEntry> bottom;  // lowest weights, descending
  std::vector<WeightEntry> all;     // every post, descending
  WeightSummary summary;
};

inline constexpr std::size_t kExcerptChars = 60;

// Weights w = 1 − ŵ from the pseudo-event head, sorted descending with ties
// broken by ascending post id.
WeightRanking export_weights(model::ModelParams& params,
                             const text::EventCorpus& corpus,
                             std::size_t top_n);

nlohmann::ordered_json to_json(const MetricsReport& r);
nlohmann::ordered_json to_json(const WeightRanking& r);

// Human-readable aligned tables.
std::string format_table(const MetricsReport& r);
std::string format_table(const WeightRanking& r);

// Single header row plus one row per class.
std::string metrics_csv(const MetricsReport& r);
// Every post, descending by weight.
std::string weights_csv(const WeightRanking& r);

void write_text(const std::filesystem::path& path, const std::string& body);

}  // namespace metadet::eval
