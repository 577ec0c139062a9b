#include "metadetector/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "metadetector/errors.hpp"

namespace metadet::model {

namespace {

ad::Tensor glorot(ad::Shape shape, std::size_t fan_in, std::size_t fan_out,
                  std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> unif(-a, a);
  ad::Tensor t(std::move(shape));
  for (double& v : t.values()) v = unif(rng);
  t.set_requires_grad(true);
  return t;
}

ad::Tensor zeros(ad::Shape shape) {
  ad::Tensor t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return Linear{glorot({in, out}, in, out, rng), zeros({out})};
}

ad::Var apply_linear(ad::Graph& g, Linear& l, ad::Var x) {
  return g.add_bias(g.matmul(x, g.parameter(l.weight)), g.parameter(l.bias));
}

}  // namespace

std::vector<std::pair<std::string, ad::Tensor*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, ad::Tensor*>> out;
  out.emplace_back("extractor.embedding", &extractor.embedding.matrix);
  for (ConvBank& b : extractor.banks) {
    const std::string pre = "extractor.conv" + std::to_string(b.window);
    out.emplace_back(pre + ".filters", &b.filters);
    out.emplace_back(pre + ".bias", &b.bias);
  }
  out.emplace_back("extractor.fc.weight", &extractor.fc.weight);
  out.emplace_back("extractor.fc.bias", &extractor.fc.bias);
  out.emplace_back("detector.fc.weight", &detector.fc.weight);
  out.emplace_back("detector.fc.bias", &detector.fc.bias);
  for (auto [name, disc] : {std::pair{"event", &event},
                            std::pair{"pseudo", &pseudo}}) {
    const std::string pre = name;
    out.emplace_back(pre + ".hidden.weight", &disc->hidden.weight);
    out.emplace_back(pre + ".hidden.bias", &disc->hidden.bias);
    out.emplace_back(pre + ".out.weight", &disc->out.weight);
    out.emplace_back(pre + ".out.bias", &disc->out.bias);
  }
  return out;
}

std::vector<std::pair<std::string, const ad::Tensor*>>
ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const ad::Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named_tensors()) {
    out.emplace_back(name, t);
  }
  return out;
}

std::vector<ad::Tensor*> ModelParams::trainable() {
  std::vector<ad::Tensor*> out;
  for (auto& [name, t] : named_tensors()) {
    if (t->requires_grad()) out.push_back(t);
  }
  return out;
}

std::size_t ModelParams::trainable_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_tensors()) {
    if (t->requires_grad()) n += t->size();
  }
  return n;
}

void ModelParams::zero_grad() {
  for (ad::Tensor* t : trainable()) t->zero_grad();
}

std::size_t expected_parameter_count(const ModelDims& dims,
                                     bool embeddings_trainable) {
  const std::size_t d = dims.embedding_dim, nc = dims.num_filters;
  std::size_t n = embeddings_trainable ? dims.vocab_size * d : 0;
  for (std::size_t h = 1; h <= dims.max_window; ++h) n += nc * d * h + nc;
  n += dims.pooled_dim() * dims.feature_dim + dims.feature_dim;
  n += dims.feature_dim * 2 + 2;
  const std::size_t disc = dims.feature_dim * dims.disc_hidden +
                           dims.disc_hidden + dims.disc_hidden + 1;
  return n + 2 * disc;
}

ModelParams init_params(ModelDims dims, text::Vocabulary vocab,
                        text::EmbeddingTable embedding, std::uint64_t seed) {
  if (dims.num_filters == 0 || dims.max_window == 0 || dims.feature_dim == 0 ||
      dims.disc_hidden == 0 || dims.embedding_dim == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (embedding.vocab_size() != vocab.size() ||
      embedding.dim() != dims.embedding_dim) {
    throw DataError("embedding table " +
                    ad::shape_str(embedding.matrix.shape()) +
                    " does not match vocabulary of " +
                    std::to_string(vocab.size()) + " tokens and d=" +
                    std::to_string(dims.embedding_dim));
  }
  if (dims.max_len < dims.max_window) {
    throw ConfigError("max sentence length " + std::to_string(dims.max_len) +
                      " is shorter than the largest window " +
                      std::to_string(dims.max_window));
  }
  dims.vocab_size = vocab.size();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.dims = dims;
  p.vocab = std::move(vocab);
  p.seed = seed;
  p.extractor.embedding = std::move(embedding);
  p.extractor.embedding.matrix.set_requires_grad(
      p.extractor.embedding.trainable);
  const std::size_t d = dims.embedding_dim, nc = dims.num_filters;
  for (std::size_t h = 1; h <= dims.max_window; ++h) {
    p.extractor.banks.push_back(
        ConvBank{h, glorot({nc, d, h}, d * h, nc * h, rng), zeros({nc})});
  }
  p.extractor.fc = make_linear(dims.pooled_dim(), dims.feature_dim, rng);
  p.detector.fc = make_linear(dims.feature_dim, 2, rng);
  p.event.hidden = make_linear(dims.feature_dim, dims.disc_hidden, rng);
  p.event.out = make_linear(dims.disc_hidden, 1, rng);
  p.pseudo.hidden = make_linear(dims.feature_dim, dims.disc_hidden, rng);
  p.pseudo.out = make_linear(dims.disc_hidden, 1, rng);
  return p;
}

ad::Var embed_batch(ad::Graph& g, FeatureExtractorParams& fe,
                    std::span<const std::int32_t> ids, std::size_t batch) {
  if (batch == 0 || ids.size() % batch != 0) {
    throw DimensionError("embed_batch: " + std::to_string(ids.size()) +
                         " ids do not split into " + std::to_string(batch) +
                         " rows");
  }
  return g.embedding(g.parameter(fe.embedding.matrix), ids, batch,
                     ids.size() / batch);
}

ad::Var extract_features(ad::Graph& g, FeatureExtractorParams& fe,
                         ad::Var embedded, bool training,
                         double dropout_rate) {
  const ad::Tensor& x = g.value(embedded);
  if (x.rank() != 3) {
    throw DimensionError("extract_features expects [B×d×k], got " +
                         ad::shape_str(x.shape()));
  }
  const std::size_t k = x.dim(2);
  std::vector<ad::Var> pooled;
  for (ConvBank& bank : fe.banks) {
    if (bank.window > k) {
      throw ConfigError("sequence length " + std::to_string(k) +
                        " is shorter than window " +
                        std::to_string(bank.window));
    }
    ad::Var c = g.conv_text(embedded, g.parameter(bank.filters),
                            g.parameter(bank.bias));
    pooled.push_back(g.max_pool_full(c));  // [B×n_c]
  }
  ad::Var temp = g.concat_cols(pooled);
  temp = g.dropout(temp, dropout_rate, training);
  return g.relu(apply_linear(g, fe.fc, temp));
}

ad::Var detect(ad::Graph& g, DetectorParams& det, ad::Var features) {
  return g.softmax_rows(apply_linear(g, det.fc, features));
}

ad::Var discriminator_head(ad::Graph& g, DiscriminatorParams& disc,
                           ad::Var features) {
  ad::Var h = g.relu(apply_linear(g, disc.hidden, features));
  ad::Var logit = apply_linear(g, disc.out, h);  // [B×1]
  const std::size_t batch = g.value(logit).dim(0);
  return g.reshape(g.sigmoid(logit), {batch});
}

ad::Var discriminate_event(ad::Graph& g, DiscriminatorParams& disc,
                           ad::Var features, double lambda) {
  return discriminator_head(g, disc, g.grl(features, lambda));
}

ad::Var pseudo_discriminate(ad::Graph& g, DiscriminatorParams& disc,
                            ad::Var features) {
  return discriminator_head(g, disc, g.detach(features));
}

Inference infer(ModelParams& params, std::span<const std::int32_t> ids,
                std::size_t n, std::size_t chunk) {
  const std::size_t k = params.dims.max_len;
  if (ids.size() != n * k) {
    throw DimensionError("infer: expected " + std::to_string(n) + "×" +
                         std::to_string(k) + " ids");
  }
  Inference out;
  out.probs.reserve(2 * n);
  out.pseudo.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t b = std::min(chunk, n - begin);
    ad::Graph g;
    ad::Var emb = embed_batch(g, params.extractor,
                              ids.subspan(begin * k, b * k), b);
    ad::Var feats = extract_features(g, params.extractor, emb, false, 0.0);
    const auto probs = g.value(detect(g, params.detector, feats)).values();
    const auto pseudo =
        g.value(pseudo_discriminate(g, params.pseudo, feats)).values();
    out.probs.insert(out.probs.end(), probs.begin(), probs.end());
    out.pseudo.insert(out.pseudo.end(), pseudo.begin(), pseudo.end());
  }
  return out;
}

}  // namespace metadet::model
