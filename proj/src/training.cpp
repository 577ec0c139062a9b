#include "metadetector/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "metadetector/errors.hpp"

namespace metadet::train {

const char* to_string(WeightingOverride w) {
  switch (w) {
    case WeightingOverride::kAuto: return "auto";
    case WeightingOverride::kAlwaysOn: return "always_on";
    case WeightingOverride::kAlwaysOff: return "always_off";
  }
  return "auto";
}

WeightingOverride parse_weighting(const std::string& s) {
  if (s == "auto") return WeightingOverride::kAuto;
  if (s == "always_on" || s == "on") return WeightingOverride::kAlwaysOn;
  if (s == "always_off" || s == "off") return WeightingOverride::kAlwaysOff;
  throw ConfigError("weighting must be auto, on or off, got '" + s + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be >= 0");
  if (!(mu >= 0.0) || !std::isfinite(mu)) fail("mu must be >= 0");
  if (!(d_star >= 0.0)) fail("d_star must be >= 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
  if (batch_size < 2 || batch_size % 2 != 0) {
    fail("batch_size must be a positive even number, got " +
         std::to_string(batch_size));
  }
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (embedding_dim < 1 || num_filters < 1 || max_window < 1) {
    fail("embedding_dim, num_filters and max_window must be >= 1");
  }
  if (max_len != 0 && max_len < max_window) {
    fail("max_len " + std::to_string(max_len) +
         " is shorter than the largest window " + std::to_string(max_window));
  }
  if (!(length_quantile > 0.0 && length_quantile <= 1.0)) {
    fail("length_quantile must lie in (0, 1]");
  }
  if (min_count < 1) fail("min_count must be >= 1");
}

nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lambda"] = c.lambda;
  j["mu"] = c.mu;
  j["d_star"] = c.d_star;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  j["freeze_embeddings"] = c.freeze_embeddings;
  j["weighting_override"] = to_string(c.weighting_override);
  j["embedding_dim"] = c.embedding_dim;
  j["num_filters"] = c.num_filters;
  j["max_window"] = c.max_window;
  j["max_len"] = c.max_len;
  j["length_quantile"] = c.length_quantile;
  j["min_count"] = c.min_count;
  j["pretrained_vectors"] = c.pretrained_vectors;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const auto& v = it.value();
      if (v.is_object() || v.is_array()) {
        throw ConfigError("config key '" + key + "' must be a scalar");
      }
      if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "mu") c.mu = v.get<double>();
      else if (key == "d_star") c.d_star = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "freeze_embeddings") c.freeze_embeddings = v.get<bool>();
      else if (key == "weighting_override")
        c.weighting_override = parse_weighting(v.get<std::string>());
      else if (key == "embedding_dim") c.embedding_dim = v.get<std::size_t>();
      else if (key == "num_filters") c.num_filters = v.get<std::size_t>();
      else if (key == "max_window") c.max_window = v.get<std::size_t>();
      else if (key == "max_len") c.max_len = v.get<std::size_t>();
      else if (key == "length_quantile") c.length_quantile = v.get<double>();
      else if (key == "min_count") c.min_count = v.get<std::size_t>();
      else if (key == "pretrained_vectors")
        c.pretrained_vectors = v.get<std::string>();
      else
        throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

ad::Var loss_detection_weighted(ad::Graph& g, ad::Var probs,
                                std::span<const int> labels,
                                std::span<const double> weights) {
  const ad::Tensor& p = g.value(probs);
  if (p.rank() != 2 || p.dim(1) != 2) {
    throw DimensionError("detection loss expects [B×2] probabilities, got " +
                         ad::shape_str(p.shape()));
  }
  const std::size_t b = p.dim(0);
  if (labels.size() != b || weights.size() != b) {
    throw ContractError("detection loss: " + std::to_string(b) + " rows, " +
                        std::to_string(labels.size()) + " labels, " +
                        std::to_string(weights.size()) + " weights");
  }
  ad::Tensor coeff({b, 2});
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ContractError("detection loss: label must be 0 or 1");
    }
    coeff[i * 2 + static_cast<std::size_t>(labels[i])] =
        -weights[i] / static_cast<double>(b);
  }
  return g.sum(g.mul_const(g.log_clamped(probs, kProbEps), coeff));
}

ad::Var loss_event_weighted(ad::Graph& g, ad::Var src_probs, ad::Var tgt_probs,
                            std::span<const double> weights) {
  const ad::Tensor& s = g.value(src_probs);
  const ad::Tensor& t = g.value(tgt_probs);
  if (s.rank() != 1 || t.rank() != 1) {
    throw DimensionError("event loss expects rank-1 probabilities");
  }
  if (weights.size() != s.size()) {
    throw ContractError("event loss: " + std::to_string(s.size()) +
                        " source probabilities, " +
                        std::to_string(weights.size()) + " weights");
  }
  if (s.size() == 0 || t.size() == 0) {
    throw ContractError("event loss: empty source or target batch");
  }
  ad::Tensor cs({s.size()});
  for (std::size_t i = 0; i < s.size(); ++i) {
    cs[i] = -weights[i] / static_cast<double>(s.size());
  }
  ad::Tensor ct({t.size()}, -1.0 / static_cast<double>(t.size()));
  ad::Var src_term = g.sum(g.mul_const(g.log_clamped(src_probs, kProbEps), cs));
  ad::Var tgt_term = g.sum(
      g.mul_const(g.log_clamped(g.affine(tgt_probs, -1.0, 1.0), kProbEps), ct));
  return g.add(src_term, tgt_term);
}

ad::Var loss_pseudo(ad::Graph& g, ad::Var src_probs, ad::Var tgt_probs) {
  const std::vector<double> ones(g.value(src_probs).size(), 1.0);
  return loss_event_weighted(g, src_probs, tgt_probs, ones);
}

WeightVector compute_weights(std::span<const double> pseudo_probs,
                             bool gate_open, WeightingOverride override) {
  const bool active = override == WeightingOverride::kAlwaysOn ||
                      (override == WeightingOverride::kAuto && gate_open);
  WeightVector w;
  if (!active) {
    w.mode = WeightVector::Mode::kAllOnes;
    w.values.assign(pseudo_probs.size(), 1.0);
    return w;
  }
  w.mode = WeightVector::Mode::kGatedWeights;
  w.values.reserve(pseudo_probs.size());
  for (double p : pseudo_probs) {
    w.values.push_back(1.0 - std::clamp(p, kProbEps, 1.0 - kProbEps));
  }
  return w;
}

ad::Var total_loss(ad::Graph& g, ad::Var loss_yw, ad::Var loss_pe,
                   ad::Var loss_ew, double mu) {
  return g.add(g.add(loss_yw, g.scale(loss_pe, mu)), loss_ew);
}

std::vector<Batch> make_batches(std::size_t n_source, std::size_t n_target,
                                std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw ConfigError("batch size must be even and >= 2");
  }
  const std::size_t half = batch_size / 2;
  if (n_source < half || n_target < half) {
    throw ConfigError("each corpus needs at least " + std::to_string(half) +
                      " posts for batch size " + std::to_string(batch_size) +
                      " (source " + std::to_string(n_source) + ", target " +
                      std::to_string(n_target) + ")");
  }
  const std::size_t n_batches = (std::max(n_source, n_target) + half - 1) / half;

  struct Stream {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
  };
  auto reshuffle = [&rng](Stream& s) {
    std::shuffle(s.order.begin(), s.order.end(), rng);
    s.pos = 0;
  };
  auto take = [&](Stream& s, std::vector<std::size_t>& out) {
    for (std::size_t i = 0; i < half; ++i) {
      if (s.pos == s.order.size()) reshuffle(s);
      out.push_back(s.order[s.pos++]);
    }
  };
  Stream src, tgt;
  src.order.resize(n_source);
  tgt.order.resize(n_target);
  std::iota(src.order.begin(), src.order.end(), std::size_t{0});
  std::iota(tgt.order.begin(), tgt.order.end(), std::size_t{0});
  reshuffle(src);
  reshuffle(tgt);

  std::vector<Batch> batches(n_batches);
  for (Batch& b : batches) {
    b.source.reserve(half);
    b.target.reserve(half);
    take(src, b.source);
    take(tgt, b.target);
  }
  return batches;
}

void sgd_step(std::span<ad::Tensor* const> params, double lr) {
  for (ad::Tensor* t : params) {
    auto v = t->values();
    auto g = t->grad();
    for (std::size_t i = 0; i < g.size(); ++i) v[i] -= lr * g[i];
    t->zero_grad();
  }
}

namespace {

void check_finite(double v, const char* name) {
  if (!std::isfinite(v)) {
    throw DataError(std::string("non-finite ") + name + " loss");
  }
}

std::size_t count_correct(std::span<const double> probs,
                          std::span<const int> labels) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int pred = probs[2 * i + 1] > probs[2 * i] ? 1 : 0;
    n += pred == labels[i];
  }
  return n;
}

std::vector<int> labels_of(const text::EventCorpus& c) {
  std::vector<int> out;
  out.reserve(c.size());
  for (const text::Post& p : c.posts) {
    if (!p.label) {
      throw ContractError("post '" + p.id + "' has no label");
    }
    out.push_back(static_cast<int>(*p.label));
  }
  return out;
}

}  // namespace

StepResult train_step(model::ModelParams& params, const StepInput& batch,
                      const TrainConfig& config, bool gate_open,
                      std::uint64_t graph_seed) {
  const std::size_t k = params.dims.max_len;
  const std::size_t bs = batch.source_ids.size() / k;
  const std::size_t bt = batch.target_ids.size() / k;
  if (bs * k != batch.source_ids.size() || bt * k != batch.target_ids.size() ||
      batch.source_labels.size() != bs) {
    throw ContractError("train_step: inconsistent batch shapes");
  }
  std::vector<std::int32_t> ids;
  ids.reserve((bs + bt) * k);
  ids.insert(ids.end(), batch.source_ids.begin(), batch.source_ids.end());
  ids.insert(ids.end(), batch.target_ids.begin(), batch.target_ids.end());

  ad::Graph g(graph_seed);
  ad::Var emb = model::embed_batch(g, params.extractor, ids, bs + bt);
  ad::Var feats =
      model::extract_features(g, params.extractor, emb, true, config.dropout);

  ad::Var pseudo = model::pseudo_discriminate(g, params.pseudo, feats);
  ad::Var loss_pe = loss_pseudo(g, g.slice_rows(pseudo, 0, bs),
                                g.slice_rows(pseudo, bs, bs + bt));

  const auto pseudo_src = g.value(pseudo).values().subspan(0, bs);
  StepResult r;
  r.weights = compute_weights(pseudo_src, gate_open, config.weighting_override);

  ad::Var probs =
      model::detect(g, params.detector, g.slice_rows(feats, 0, bs));
  ad::Var loss_yw = loss_detection_weighted(g, probs, batch.source_labels,
                                            r.weights.values);

  ad::Var event =
      model::discriminate_event(g, params.event, feats, config.lambda);
  ad::Var loss_ew =
      loss_event_weighted(g, g.slice_rows(event, 0, bs),
                          g.slice_rows(event, bs, bs + bt), r.weights.values);

  r.loss_yw = g.value(loss_yw).item();
  r.loss_ew = g.value(loss_ew).item();
  r.loss_pe = g.value(loss_pe).item();
  check_finite(r.loss_yw, "detection (L_yw)");
  check_finite(r.loss_ew, "event (L_ew)");
  check_finite(r.loss_pe, "pseudo-event (L_pe)");
  r.source_correct =
      count_correct(g.value(probs).values(), batch.source_labels);

  g.backward(total_loss(g, loss_yw, loss_pe, loss_ew, config.mu));
  sgd_step(params.trainable(), config.lr);
  return r;
}

PreparedData prepare(const text::EventCorpus& source,
                     const text::EventCorpus& target,
                     const TrainConfig& config) {
  config.validate();
  source.validate();
  target.validate();
  const text::EventCorpus* both[] = {&source, &target};
  PreparedData out;
  out.vocab = text::build_vocab(both, config.min_count);
  out.k = config.max_len
              ? config.max_len
              : std::max(text::choose_k(both, config.length_quantile),
                         config.max_window);

  std::mt19937_64 embed_rng(derive_seed(config.seed, 1));
  out.table = config.pretrained_vectors.empty()
                  ? text::random_embedding_table(out.vocab.size(),
                                                 config.embedding_dim, embed_rng)
                  : text::load_pretrained_vectors(config.pretrained_vectors,
                                                  out.vocab, embed_rng);
  if (out.table.dim() != config.embedding_dim) {
    throw ConfigError("pretrained vectors have d=" +
                      std::to_string(out.table.dim()) + ", config says " +
                      std::to_string(config.embedding_dim));
  }
  out.table.trainable = !config.freeze_embeddings;
  out.shift = mmd::shift_gate(source, target, out.vocab, out.k, out.table,
                              config.d_star);
  return out;
}

TrainResult train(const text::EventCorpus& source,
                  const text::EventCorpus& target, const TrainConfig& config) {
  config.validate();
  source.validate();
  target.validate();
  const std::vector<int> source_labels = labels_of(source);
  std::optional<std::vector<int>> target_labels;
  if (target.fully_labeled()) target_labels = labels_of(target);

  TrainResult result;
  PreparedData prep = prepare(source, target, config);
  result.shift = prep.shift;
  const std::size_t k = prep.k;

  model::ModelDims dims;
  dims.vocab_size = prep.vocab.size();
  dims.embedding_dim = config.embedding_dim;
  dims.max_len = k;
  dims.num_filters = config.num_filters;
  dims.max_window = config.max_window;
  result.params = model::init_params(dims, std::move(prep.vocab),
                                     std::move(prep.table),
                                     derive_seed(config.seed, 2));
  model::ModelParams& params = result.params;

  const auto src_ids = text::encode_corpus(source, params.vocab, k);
  const auto tgt_ids = text::encode_corpus(target, params.vocab, k);

  std::mt19937_64 batch_rng(derive_seed(config.seed, 3));
  const std::uint64_t dropout_base = derive_seed(config.seed, 4);
  std::uint64_t step = 0;
  double best_acc = -1.0;

  std::vector<std::int32_t> sb, tb;
  std::vector<int> lb;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = make_batches(source.size(), target.size(),
                                      config.batch_size, batch_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.weight_min = 1.0;
    rec.weight_max = 0.0;
    double w_sum = 0.0;
    std::size_t w_n = 0, correct = 0, seen = 0;
    for (const Batch& b : batches) {
      sb.clear();
      tb.clear();
      lb.clear();
      for (std::size_t i : b.source) {
        sb.insert(sb.end(), src_ids.begin() + i * k,
                  src_ids.begin() + (i + 1) * k);
        lb.push_back(source_labels[i]);
      }
      for (std::size_t i : b.target) {
        tb.insert(tb.end(), tgt_ids.begin() + i * k,
                  tgt_ids.begin() + (i + 1) * k);
      }
      StepResult s;
      try {
        s = train_step(params, {sb, tb, lb}, config, result.shift.gate_open,
                       derive_seed(dropout_base, step++));
      } catch (const DataError& e) {
        throw DataError(std::string(e.what()) + " at epoch " +
                        std::to_string(epoch));
      }
      rec.loss_yw += s.loss_yw;
      rec.loss_ew += s.loss_ew;
      rec.loss_pe += s.loss_pe;
      correct += s.source_correct;
      seen += lb.size();
      for (double w : s.weights.values) {
        w_sum += w;
        rec.weight_min = std::min(rec.weight_min, w);
        rec.weight_max = std::max(rec.weight_max, w);
      }
      w_n += s.weights.values.size();
    }
    const double nb = static_cast<double>(batches.size());
    rec.loss_yw /= nb;
    rec.loss_ew /= nb;
    rec.loss_pe /= nb;
    rec.source_accuracy = static_cast<double>(correct) / seen;
    rec.weight_mean = w_sum / static_cast<double>(w_n);
    if (target_labels) {
      const auto inf = model::infer(params, tgt_ids, target.size());
      rec.target_accuracy =
          static_cast<double>(count_correct(inf.probs, *target_labels)) /
          static_cast<double>(target.size());
      if (*rec.target_accuracy > best_acc) {
        best_acc = *rec.target_accuracy;
        result.best_params = params;
        result.best_epoch = epoch;
      }
    }
    result.history.push_back(rec);
  }
  return result;
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream os;
  os << "epoch,L_yw,L_ew,L_pe,source_accuracy,target_accuracy,weight_mean,"
        "weight_min,weight_max\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const EpochRecord& r : history) {
    os << r.epoch << ',' << num(r.loss_yw) << ',' << num(r.loss_ew) << ','
       << num(r.loss_pe) << ',' << num(r.source_accuracy) << ','
       << (r.target_accuracy ? num(*r.target_accuracy) : std::string()) << ','
       << num(r.weight_mean) << ',' << num(r.weight_min) << ','
       << num(r.weight_max) << '\n';
  }
  return os.str();
}

void write_history_csv(const std::filesystem::path& path,
                       const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write history '" + path.string() + "'");
  out << history_csv(history);
}

}  // namespace metadet::train
