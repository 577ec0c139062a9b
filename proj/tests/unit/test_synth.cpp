#include <cmath>
#include <set>

#include "doctest.h"
#include "metadetector/errors.hpp"
#include "metadetector/mmd.hpp"
#include "metadetector/synth.hpp"
#include "metadetector/training.hpp"

using namespace metadet;

namespace {

std::size_t count_fake(const text::EventCorpus& c) {
  std::size_t n = 0;
  for (const auto& p : c.posts) n += p.label == text::Label::kFake;
  return n;
}

bool same_corpus(const text::EventCorpus& a, const text::EventCorpus& b) {
  if (a.size() != b.size() || a.event_id != b.event_id) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.posts[i].id != b.posts[i].id || a.posts[i].text != b.posts[i].text ||
        a.posts[i].label != b.posts[i].label) {
      return false;
    }
  }
  return true;
}

double measured_dk(const synth::SynthSpec& spec) {
  auto pair = synth::generate(spec);
  train::TrainConfig cfg;
  cfg.seed = spec.seed;
  return train::prepare(pair.source, pair.target, cfg).shift.d_k;
}

}  // namespace

TEST_CASE("generation is deterministic and seed-sensitive") {
  synth::SynthSpec spec;
  spec.n_source = 300;
  spec.n_target = 200;
  auto a = synth::generate(spec);
  auto b = synth::generate(spec);
  CHECK(same_corpus(a.source, b.source));
  CHECK(same_corpus(a.target, b.target));
  spec.seed = 1;
  CHECK_FALSE(same_corpus(a.source, synth::generate(spec).source));
  CHECK(a.source.size() == 300);
  CHECK(a.target.size() == 200);
  CHECK(a.source.fully_labeled());
  CHECK(a.target.fully_labeled());
  CHECK(a.source.event_id == "event1");
  CHECK(a.target.event_id == "event2");
  CHECK(a.target.role == text::CorpusRole::kTarget);
}

TEST_CASE("posts have the requested length and draw from disjoint blocks") {
  synth::SynthSpec spec;
  spec.n_source = 400;
  spec.n_target = 400;
  spec.signal_tokens = 3;
  auto pair = synth::generate(spec);
  auto all = synth::all_tokens(spec);
  std::set<std::string> vocab(all.begin(), all.end());
  CHECK(vocab.size() == all.size());
  CHECK(all.size() == spec.shared_vocab_size + 2 * spec.specific_vocab_size);

  auto block = [&](const std::string& t) {
    if (t.rfind("sigreal", 0) == 0) return 0;
    if (t.rfind("sigfake", 0) == 0) return 1;
    if (t.rfind("shared", 0) == 0) return 2;
    if (t.rfind("event1w", 0) == 0) return 3;
    if (t.rfind("event2w", 0) == 0) return 4;
    return -1;
  };
  for (const auto* c : {&pair.source, &pair.target}) {
    const int own = c == &pair.source ? 3 : 4;
    for (const auto& p : c->posts) {
      auto toks = text::tokenize(p.text);
      CHECK(toks.size() == spec.post_length);
      std::size_t signal = 0;
      for (const auto& t : toks) {
        CHECK(vocab.count(t) == 1);
        const int b = block(t);
        CHECK(b != 7 - own);
        if (b == 0) CHECK(p.label == text::Label::kReal);
        if (b == 1) CHECK(p.label == text::Label::kFake);
        signal += b <= 1;
      }
      CHECK((signal == 0 || signal == spec.signal_tokens));
    }
  }
}

TEST_CASE("label balance is exact") {
  for (double ratio : {0.5, 0.3, 0.77}) {
    synth::SynthSpec spec;
    spec.n_source = 1000;
    spec.n_target = 1500;
    spec.fake_ratio = ratio;
    auto pair = synth::generate(spec);
    const double fs = static_cast<double>(count_fake(pair.source)) / 1000.0;
    const double ft = static_cast<double>(count_fake(pair.target)) / 1500.0;
    CHECK(std::abs(fs - ratio) <= 0.02);
    CHECK(std::abs(ft - ratio) <= 0.02);
    CHECK(count_fake(pair.source) == static_cast<std::size_t>(std::llround(ratio * 1000)));
  }
}

TEST_CASE("shared-token Bayes rule reaches its closed-form accuracy") {
  synth::SynthSpec spec;
  spec.n_source = 4000;
  spec.n_target = 4000;
  spec.signal_strength = 0.8;
  CHECK(synth::shared_bayes_accuracy(spec) == doctest::Approx(0.9));
  CHECK(synth::shared_bayes_accuracy(spec) >= 1.0 - (1.0 - 0.8) / 2.0);
  auto pair = synth::generate(spec);
  for (const auto* c : {&pair.source, &pair.target}) {
    std::size_t correct = 0;
    for (const auto& p : c->posts) {
      // Signal token decides; otherwise predict the majority (real on ties).
      text::Label guess = text::Label::kReal;
      for (const auto& t : text::tokenize(p.text)) {
        if (t.rfind("sigfake", 0) == 0) guess = text::Label::kFake;
      }
      correct += guess == p.label;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(c->size());
    // Binomial standard error at n=4000 is ~0.005.
    CHECK(std::abs(acc - 0.9) <= 0.025);
  }
}

TEST_CASE("measured shift grows with the shift parameter") {
  synth::SynthSpec spec;
  spec.n_source = 300;
  spec.n_target = 300;
  spec.shared_vocab_size = 20;
  spec.specific_vocab_size = 8;
  spec.post_length = 32;
  spec.shift = 0.0;
  const double d0 = measured_dk(spec);
  train::TrainConfig cfg;
  auto pair = synth::generate(spec);
  CHECK_FALSE(train::prepare(pair.source, pair.target, cfg).shift.gate_open);
  double prev = d0;
  for (double s : {0.3, 0.6, 0.9}) {
    spec.shift = s;
    const double d = measured_dk(spec);
    CHECK(d > prev);
    prev = d;
  }
  CHECK(prev > d0);
}

TEST_CASE("anomaly injection count law") {
  synth::SynthSpec spec;
  spec.n_source = 100;
  auto pair = synth::generate(spec);
  auto none = synth::inject_anomalies(pair.source, 0.0, 4, spec);
  CHECK(none.replaced.empty());
  CHECK(same_corpus(none.corpus, pair.source));

  auto inj = synth::inject_anomalies(pair.source, 0.2, 4, spec);
  CHECK(inj.replaced.size() == 20);
  CHECK(std::is_sorted(inj.replaced.begin(), inj.replaced.end()));
  std::set<std::size_t> replaced(inj.replaced.begin(), inj.replaced.end());
  CHECK(replaced.size() == 20);
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& p = inj.corpus.posts[i];
    CHECK(p.id == pair.source.posts[i].id);
    CHECK(p.label.has_value());
    if (replaced.count(i)) {
      for (const auto& t : text::tokenize(p.text)) CHECK(t.rfind("event1w", 0) == 0);
    } else {
      CHECK(p.text == pair.source.posts[i].text);
    }
  }
  auto again = synth::inject_anomalies(pair.source, 0.2, 4, spec);
  CHECK(same_corpus(again.corpus, inj.corpus));
  CHECK_THROWS_AS(synth::inject_anomalies(pair.source, 0.6, 4, spec), ConfigError);
  CHECK_THROWS_AS(synth::inject_anomalies(pair.source, -0.1, 4, spec), ConfigError);
}

TEST_CASE("topic vectors cover every token and separate the event blocks") {
  synth::SynthSpec spec;
  spec.topic_offset = 2.0;
  spec.vector_noise = 0.5;
  auto wv = synth::topic_vectors(spec);
  CHECK(wv.tokens == synth::all_tokens(spec));
  CHECK(wv.values.size() == wv.tokens.size() * wv.dim);
  auto mean_of = [&](const std::string& prefix) {
    std::vector<double> m(wv.dim, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < wv.tokens.size(); ++i) {
      if (wv.tokens[i].rfind(prefix, 0) != 0) continue;
      ++n;
      for (std::size_t j = 0; j < wv.dim; ++j) m[j] += wv.values[i * wv.dim + j];
    }
    for (auto& v : m) v /= static_cast<double>(n);
    return m;
  };
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  // Block means sit near their centres (norm 2); shared tokens near zero.
  CHECK(norm(mean_of("event1w")) > 1.5);
  CHECK(norm(mean_of("event2w")) > 1.5);
  CHECK(norm(mean_of("shared")) < 0.5);
  auto again = synth::topic_vectors(spec);
  CHECK(again.values == wv.values);
}

TEST_CASE("invalid specs are configuration errors") {
  auto bad = [](auto mutate) {
    synth::SynthSpec s;
    mutate(s);
    return s;
  };
  CHECK_THROWS_AS(synth::generate(bad([](auto& s) { s.shift = 1.5; })), ConfigError);
  CHECK_THROWS_AS(synth::generate(bad([](auto& s) { s.n_source = 0; })), ConfigError);
  CHECK_THROWS_AS(synth::generate(bad([](auto& s) { s.fake_ratio = -0.1; })), ConfigError);
  CHECK_THROWS_AS(synth::generate(bad([](auto& s) { s.post_length = 0; })), ConfigError);
  CHECK_THROWS_AS(synth::generate(bad([](auto& s) { s.target_event = s.source_event; })),
                  ConfigError);
  CHECK_THROWS_AS(synth::generate(bad([](auto& s) { s.signal_tokens = 100; })),
                  ConfigError);
}
