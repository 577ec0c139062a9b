#include "metadetector/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "metadetector/errors.hpp"

namespace metadet::eval {

namespace {

std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Byte prefix of at most n bytes that does not split a UTF-8 sequence.
std::string excerpt(const std::string& s, std::size_t n) {
  if (s.size() <= n) return s;
  std::size_t cut = n;
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
  return s.substr(0, cut) + "...";
}

nlohmann::ordered_json class_json(const ClassMetrics& c) {
  nlohmann::ordered_json j;
  j["precision"] = c.precision;
  j["recall"] = c.recall;
  j["f1"] = c.f1;
  j["tp"] = c.tp;
  j["fp"] = c.fp;
  j["tn"] = c.tn;
  j["fn"] = c.fn;
  j["precision_undefined"] = c.precision_undefined;
  j["recall_undefined"] = c.recall_undefined;
  j["f1_undefined"] = c.f1_undefined;
  return j;
}

nlohmann::ordered_json entry_json(const WeightEntry& e) {
  nlohmann::ordered_json j;
  j["id"] = e.post_id;
  j["excerpt"] = e.excerpt;
  j["weight"] = e.weight;
  j["pseudo"] = e.pseudo;
  return j;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

ClassMetrics class_metrics(std::size_t tp, std::size_t fp, std::size_t tn,
                           std::size_t fn) {
  ClassMetrics c{tp, fp, tn, fn};
  if (tp + fp == 0) {
    c.precision_undefined = true;
  } else {
    c.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn == 0) {
    c.recall_undefined = true;
  } else {
    c.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (c.precision + c.recall == 0.0) {
    c.f1_undefined = true;
  } else {
    c.f1 = 2.0 * c.precision * c.recall / (c.precision + c.recall);
  }
  return c;
}

MetricsReport metrics_from_predictions(std::span<const int> predicted,
                                       std::span<const int> labels) {
  if (predicted.size() != labels.size()) {
    throw DimensionError("metrics: " + std::to_string(predicted.size()) +
                         " predictions for " + std::to_string(labels.size()) +
                         " labels");
  }
  // counts[label][pred]
  std::size_t counts[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predicted[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) {
      throw DataError("metrics: labels and predictions must be 0 or 1");
    }
    ++counts[y][p];
  }
  MetricsReport r;
  r.n_evaluated = labels.size();
  const std::size_t correct = counts[0][0] + counts[1][1];
  r.accuracy = r.n_evaluated
                   ? static_cast<double>(correct) / static_cast<double>(r.n_evaluated)
                   : 0.0;
  r.fake = class_metrics(counts[0][0], counts[1][0], counts[1][1], counts[0][1]);
  r.real = class_metrics(counts[1][1], counts[0][1], counts[0][0], counts[1][0]);
  return r;
}

std::vector<int> predict(model::ModelParams& params,
                         const text::EventCorpus& corpus) {
  const auto ids = text::encode_corpus(corpus, params.vocab, params.dims.max_len);
  const auto inf = model::infer(params, ids, corpus.size());
  std::vector<int> out(corpus.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = inf.probs[2 * i + 1] > inf.probs[2 * i] ? 1 : 0;
  }
  return out;
}

MetricsReport evaluate(model::ModelParams& params,
                       const text::EventCorpus& test) {
  std::vector<int> labels;
  labels.reserve(test.size());
  for (const auto& p : test.posts) {
    if (!p.label) {
      throw ContractError("evaluate: post '" + p.id + "' has no label");
    }
    labels.push_back(static_cast<int>(*p.label));
  }
  return metrics_from_predictions(predict(params, test), labels);
}

WeightRanking export_weights(model::ModelParams& params,
                             const text::EventCorpus& corpus,
                             std::size_t top_n) {
  const auto ids = text::encode_corpus(corpus, params.vocab, params.dims.max_len);
  const auto inf = model::infer(params, ids, corpus.size());
  WeightRanking r;
  r.all.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus.posts[i];
    r.all.push_back({p.id, excerpt(p.text, kExcerptChars),
                     1.0 - inf.pseudo[i], inf.pseudo[i]});
  }
  std::sort(r.all.begin(), r.all.end(),
            [](const WeightEntry& a, const WeightEntry& b) {
              if (a.weight != b.weight) return a.weight > b.weight;
              return a.post_id < b.post_id;
            });
  const std::size_t n = r.all.size();
  const std::size_t m = std::min(top_n, n);
  r.top.assign(r.all.begin(), r.all.begin() + static_cast<std::ptrdiff_t>(m));
  r.bottom.assign(r.all.end() - static_cast<std::ptrdiff_t>(m), r.all.end());
  if (n > 0) {
    double sum = 0.0;
    for (const auto& e : r.all) sum += e.weight;
    r.summary.mean = sum / static_cast<double>(n);
    r.summary.max = r.all.front().weight;
    r.summary.min = r.all.back().weight;
    // Nearest-rank percentiles over the ascending order.
    for (std::size_t q = 1; q <= 9; ++q) {
      const auto rank = static_cast<std::size_t>(
          std::ceil(static_cast<double>(q) * static_cast<double>(n) / 10.0));
      const std::size_t asc = std::max<std::size_t>(rank, 1) - 1;
      r.summary.deciles[q - 1] = r.all[n - 1 - asc].weight;
    }
  }
  return r;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["n_evaluated"] = r.n_evaluated;
  j["fake"] = class_json(r.fake);
  j["real"] = class_json(r.real);
  return j;
}

nlohmann::ordered_json to_json(const WeightRanking& r) {
  nlohmann::ordered_json j;
  auto list = [](const std::vector<WeightEntry>& v) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& e : v) a.push_back(entry_json(e));
    return a;
  };
  j["n_posts"] = r.all.size();
  j["summary"] = {{"mean", r.summary.mean},
                  {"min", r.summary.min},
                  {"max", r.summary.max},
                  {"deciles", r.summary.deciles}};
  j["top"] = list(r.top);
  j["bottom"] = list(r.bottom);
  return j;
}

std::string format_table(const MetricsReport& r) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-6s %9s %9s %9s %6s %6s %6s %6s\n",
                "class", "precision", "recall", "f1", "TP", "FP", "TN", "FN");
  os << line;
  auto row = [&](const char* name, const ClassMetrics& c) {
    std::snprintf(line, sizeof line,
                  "%-6s %9.4f %9.4f %9.4f %6zu %6zu %6zu %6zu%s\n", name,
                  c.precision, c.recall, c.f1, c.tp, c.fp, c.tn, c.fn,
                  (c.precision_undefined || c.recall_undefined ||
                   c.f1_undefined)
                      ? "  (zero division)"
                      : "");
    os << line;
  };
  row("fake", r.fake);
  row("real", r.real);
  std::snprintf(line, sizeof line, "accuracy %.4f over %zu posts\n",
                r.accuracy, r.n_evaluated);
  os << line;
  return os.str();
}

std::string format_table(const WeightRanking& r) {
  std::ostringstream os;
  char line[256];
  auto block = [&](const char* title, const std::vector<WeightEntry>& v) {
    os << title << '\n';
    std::snprintf(line, sizeof line, "  %-16s %8s %8s  %s\n", "id", "weight",
                  "pseudo", "text");
    os << line;
    for (const auto& e : v) {
      std::snprintf(line, sizeof line, "  %-16s %8.4f %8.4f  %s\n",
                    e.post_id.c_str(), e.weight, e.pseudo, e.excerpt.c_str());
      os << line;
    }
  };
  block("highest weights", r.top);
  block("lowest weights", r.bottom);
  std::snprintf(line, sizeof line, "mean %.4f  min %.4f  max %.4f  n %zu\n",
                r.summary.mean, r.summary.min, r.summary.max, r.all.size());
  os << line << "deciles";
  for (double d : r.summary.deciles) os << ' ' << fmt(d, "%.4f");
  os << '\n';
  return os.str();
}

std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "class,precision,recall,f1,tp,fp,tn,fn,accuracy,n_evaluated\n";
  auto row = [&](const char* name, const ClassMetrics& c) {
    os << name << ',' << fmt(c.precision) << ',' << fmt(c.recall) << ','
       << fmt(c.f1) << ',' << c.tp << ',' << c.fp << ',' << c.tn << ','
       << c.fn << ',' << fmt(r.accuracy) << ',' << r.n_evaluated << '\n';
  };
  row("fake", r.fake);
  row("real", r.real);
  return os.str();
}

std::string weights_csv(const WeightRanking& r) {
  std::ostringstream os;
  os << "rank,id,weight,pseudo,excerpt\n";
  for (std::size_t i = 0; i < r.all.size(); ++i) {
    const auto& e = r.all[i];
    os << i + 1 << ',' << csv_field(e.post_id) << ',' << fmt(e.weight) << ','
       << fmt(e.pseudo) << ',' << csv_field(e.excerpt) << '\n';
  }
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << body;
}

}  // namespace metadet::eval
