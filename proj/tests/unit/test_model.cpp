#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "metadetector/checkpoint.hpp"
#include "metadetector/errors.hpp"
#include "metadetector/model.hpp"

using namespace metadet;
using model::ModelDims;
using model::ModelParams;

namespace {

text::Vocabulary toy_vocab(std::size_t n_words) {
  std::vector<std::string> toks = {text::kPadToken, text::kUnkToken};
  for (std::size_t i = 0; i < n_words; ++i) toks.push_back("w" + std::to_string(i));
  return text::Vocabulary::from_tokens(toks, 1);
}

ModelParams toy_model(ModelDims dims, std::uint64_t seed, bool trainable = true) {
  auto vocab = toy_vocab(dims.vocab_size - 2);
  std::mt19937_64 rng(seed);
  auto table = text::random_embedding_table(dims.vocab_size, dims.embedding_dim, rng);
  table.trainable = trainable;
  return model::init_params(dims, vocab, table, seed);
}

ModelDims small_dims() {
  ModelDims d;
  d.vocab_size = 30;
  d.embedding_dim = 8;
  d.max_len = 10;
  d.num_filters = 4;
  d.max_window = 3;
  return d;
}

std::vector<std::int32_t> random_ids(std::size_t n, std::size_t k,
                                     std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::int32_t> ids(n * k);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng() % vocab);
  return ids;
}

std::vector<double> snapshot(const ad::Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace

TEST_CASE("feature pipeline shapes at the default dimensions") {
  ModelDims dims;
  dims.vocab_size = 50;
  dims.max_len = 12;
  CHECK(dims.pooled_dim() == 80);
  auto p = toy_model(dims, 1);
  CHECK(p.extractor.fc.weight.shape() == ad::Shape{80, 32});
  for (std::size_t b : {1u, 3u, 7u}) {
    auto ids = random_ids(b, 12, 50, b);
    ad::Graph g;
    auto e = model::embed_batch(g, p.extractor, ids, b);
    CHECK(g.value(e).shape() == ad::Shape{b, 32, 12});
    auto f = model::extract_features(g, p.extractor, e, false, 0.0);
    CHECK(g.value(f).shape() == ad::Shape{b, 32});
    for (double v : g.value(f).values()) CHECK(v >= 0.0);
    auto y = model::detect(g, p.detector, f);
    CHECK(g.value(y).shape() == ad::Shape{b, 2});
    for (std::size_t i = 0; i < b; ++i) {
      CHECK(std::abs(g.value(y)[2 * i] + g.value(y)[2 * i + 1] - 1.0) <= 1e-12);
    }
    auto s = model::discriminate_event(g, p.event, f, 1.0);
    CHECK(g.value(s).shape() == ad::Shape{b});
    for (double v : g.value(s).values()) CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("parameter count is a pure function of the dimensions") {
  for (bool trainable : {true, false}) {
    ModelDims dims;
    dims.vocab_size = 50;
    dims.max_len = 12;
    auto p = toy_model(dims, 4, trainable);
    // Hand count: embeddings, conv banks h=1..4, fc, detector, two heads.
    std::size_t expect = trainable ? 50 * 32 : 0;
    for (std::size_t h = 1; h <= 4; ++h) expect += 20 * 32 * h + 20;
    expect += 80 * 32 + 32;
    expect += 32 * 2 + 2;
    expect += 2 * (32 * 32 + 32 + 32 + 1);
    CHECK(p.trainable_count() == expect);
    CHECK(model::expected_parameter_count(dims, trainable) == expect);
  }
  auto a = toy_model(small_dims(), 1), b = toy_model(small_dims(), 2);
  CHECK(a.trainable_count() == b.trainable_count());
}

TEST_CASE("initialization is Glorot-uniform with zero biases") {
  ModelDims dims;
  dims.vocab_size = 50;
  dims.max_len = 12;
  auto p = toy_model(dims, 9);
  auto glorot = [](const ad::Tensor& w, double fan_in, double fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    bool inside = true;
    double max_abs = 0.0;
    for (double v : w.values()) {
      inside = inside && std::abs(v) <= a;
      max_abs = std::max(max_abs, std::abs(v));
    }
    return inside && max_abs > 0.5 * a;
  };
  CHECK(glorot(p.extractor.fc.weight, 80, 32));
  CHECK(glorot(p.detector.fc.weight, 32, 2));
  CHECK(glorot(p.event.hidden.weight, 32, 32));
  CHECK(glorot(p.pseudo.out.weight, 32, 1));
  for (auto* b : {&p.extractor.fc.bias, &p.detector.fc.bias, &p.event.hidden.bias,
                  &p.pseudo.out.bias}) {
    for (double v : b->values()) CHECK(v == 0.0);
  }
  // Twin heads share a shape but not values.
  CHECK(snapshot(p.event.hidden.weight) != snapshot(p.pseudo.hidden.weight));
}

TEST_CASE("zero weights give the trivial outputs") {
  auto p = toy_model(small_dims(), 3);
  for (auto& [name, t] : p.named_tensors()) {
    if (name.find("embedding") == std::string::npos) {
      for (double& v : t->values()) v = 0.0;
    }
  }
  auto ids = random_ids(4, 10, 30, 5);
  ad::Graph g;
  auto f = model::extract_features(g, p.extractor,
                                   model::embed_batch(g, p.extractor, ids, 4),
                                   false, 0.0);
  for (double v : g.value(f).values()) CHECK(v == 0.0);
  for (double v : g.value(model::detect(g, p.detector, f)).values()) CHECK(v == 0.5);
  for (double v : g.value(model::discriminate_event(g, p.event, f, 1.0)).values()) {
    CHECK(v == 0.5);
  }
  for (double v : g.value(model::pseudo_discriminate(g, p.pseudo, f)).values()) {
    CHECK(v == 0.5);
  }
}

TEST_CASE("window larger than k is a configuration error") {
  auto dims = small_dims();
  dims.max_len = 2;
  CHECK_THROWS_AS(toy_model(dims, 1), ConfigError);

  auto p = toy_model(small_dims(), 1);
  auto ids = random_ids(2, 2, 30, 1);
  ad::Graph g;
  auto e = model::embed_batch(g, p.extractor, ids, 2);
  CHECK_THROWS_AS(model::extract_features(g, p.extractor, e, false, 0.0),
                  ConfigError);
}

TEST_CASE("pseudo head never touches the extractor") {
  auto p = toy_model(small_dims(), 5);
  auto ids = random_ids(6, 10, 30, 2);
  std::vector<std::vector<double>> before;
  for (auto& [name, t] : p.named_tensors()) before.push_back(snapshot(*t));

  ad::Graph g(1);
  auto f = model::extract_features(g, p.extractor,
                                   model::embed_batch(g, p.extractor, ids, 6),
                                   true, 0.2);
  auto w = model::pseudo_discriminate(g, p.pseudo, f);
  g.backward(g.sum(g.log_clamped(w, 1e-12)));
  for (auto* t : p.trainable()) {
    for (std::size_t i = 0; i < t->size(); ++i) t->values()[i] -= 0.5 * t->grad()[i];
  }
  auto named = p.named_tensors();
  std::size_t changed_pseudo = 0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    const bool is_pseudo = named[i].first.rfind("pseudo", 0) == 0;
    if (is_pseudo) {
      changed_pseudo += snapshot(*named[i].second) != before[i];
    } else {
      CHECK_MESSAGE(snapshot(*named[i].second) == before[i], named[i].first);
    }
  }
  CHECK(changed_pseudo > 0);
}

TEST_CASE("gradient reversal law at the module level") {
  for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
    auto p = toy_model(small_dims(), 6);
    auto ids = random_ids(5, 10, 30, 3);
    auto run = [&](bool reversed) {
      p.zero_grad();
      ad::Graph g;
      auto f = model::extract_features(g, p.extractor,
                                       model::embed_batch(g, p.extractor, ids, 5),
                                       false, 0.0);
      auto e = reversed ? model::discriminate_event(g, p.event, f, lambda)
                        : model::discriminator_head(g, p.event, f);
      g.backward(g.sum(g.log_clamped(e, 1e-12)));
      std::vector<std::vector<double>> out;
      for (auto& [name, t] : p.named_tensors()) {
        out.emplace_back(t->grad().begin(), t->grad().end());
      }
      return out;
    };
    const auto plain = run(false);
    const auto rev = run(true);
    auto named = p.named_tensors();
    double worst = 0.0;
    for (std::size_t i = 0; i < named.size(); ++i) {
      const bool in_trunk = named[i].first.rfind("extractor", 0) == 0;
      for (std::size_t j = 0; j < plain[i].size(); ++j) {
        const double want = in_trunk ? -lambda * plain[i][j] : plain[i][j];
        worst = std::max(worst, std::abs(rev[i][j] - want));
      }
    }
    CHECK(worst <= 1e-10);
    if (lambda == 0.0) {
      for (std::size_t i = 0; i < named.size(); ++i) {
        if (named[i].first.rfind("extractor", 0) != 0) continue;
        for (double v : rev[i]) CHECK(v == 0.0);
      }
    }
  }
}

TEST_CASE("infer matches a direct forward pass and chunking is invisible") {
  auto p = toy_model(small_dims(), 8);
  auto ids = random_ids(13, 10, 30, 4);
  auto all = model::infer(p, ids, 13, 256);
  auto chunked = model::infer(p, ids, 13, 4);
  CHECK(all.probs == chunked.probs);
  CHECK(all.pseudo == chunked.pseudo);
  ad::Graph g;
  auto f = model::extract_features(g, p.extractor,
                                   model::embed_batch(g, p.extractor, ids, 13),
                                   false, 0.0);
  const auto& probs = g.value(model::detect(g, p.detector, f));
  for (std::size_t i = 0; i < probs.size(); ++i) CHECK(probs[i] == all.probs[i]);
}

TEST_CASE("checkpoint round trip and loud mismatches") {
  auto p = toy_model(small_dims(), 10);
  train::TrainConfig cfg;
  cfg.seed = 10;
  auto j = checkpoint_to_json(p, cfg);
  auto back = checkpoint_from_json(nlohmann::json::parse(j.dump()));
  auto a = p.named_tensors();
  auto b = back.params.named_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(snapshot(*a[i].second) == snapshot(*b[i].second));
  }
  CHECK(back.params.vocab.hash() == p.vocab.hash());
  CHECK(back.config.seed == 10);

  auto path = std::filesystem::temp_directory_path() / "metadet_model_ckpt.json";
  save_checkpoint(path, p, cfg);
  CHECK(load_checkpoint(path).params.trainable_count() == p.trainable_count());

  auto bad_hash = nlohmann::json::parse(j.dump());
  bad_hash["vocab"]["tokens"][2] = "renamed";
  CHECK_THROWS_AS(checkpoint_from_json(bad_hash), DataError);

  auto bad_version = nlohmann::json::parse(j.dump());
  bad_version["version"] = kCheckpointVersion + 1;
  CHECK_THROWS_AS(checkpoint_from_json(bad_version), DataError);

  auto bad_shape = nlohmann::json::parse(j.dump());
  bad_shape["tensors"][1]["shape"][0] = 999;
  CHECK_THROWS_AS(checkpoint_from_json(bad_shape), DataError);
}
