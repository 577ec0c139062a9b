#include "metadetector/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "metadetector/checkpoint.hpp"
#include "metadetector/errors.hpp"
#include "metadetector/eval.hpp"
#include "metadetector/synth.hpp"
#include "metadetector/training.hpp"

namespace metadet {

namespace {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string source;
  std::string target;
  std::string out;
  std::optional<double> d_star;
  std::optional<std::string> weighting;
  std::optional<double> lambda;
  std::optional<double> mu;
  std::optional<std::size_t> epochs;
  std::string csv;
  std::string checkpoint;
  std::size_t top = 10;
};

struct SynthOpts {
  synth::SynthSpec spec;
  double anomalies = 0.0;
  bool vectors = false;
};

train::TrainConfig resolve_config(const CommonOpts& o) {
  train::TrainConfig c;
  if (!o.config.empty()) c = train::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.d_star) c.d_star = *o.d_star;
  if (o.weighting) c.weighting_override = train::parse_weighting(*o.weighting);
  if (o.lambda) c.lambda = *o.lambda;
  if (o.mu) c.mu = *o.mu;
  if (o.epochs) c.epochs = *o.epochs;
  c.validate();
  return c;
}

nlohmann::ordered_json shift_json(const mmd::ShiftReport& s) {
  nlohmann::ordered_json j;
  j["d_k"] = s.d_k;
  j["d_star"] = s.d_star;
  j["gate_open"] = s.gate_open;
  j["n_source"] = s.n_source;
  j["n_target"] = s.n_target;
  j["bandwidths"] = s.bandwidths;
  return j;
}

text::EventCorpus need_corpus(const std::string& path, const char* flag,
                              text::CorpusRole role) {
  if (path.empty()) throw ConfigError(std::string(flag) + " is required");
  return text::read_corpus_jsonl(path, role);
}

int run_synth(const SynthOpts& so, const CommonOpts& o, std::ostream& out,
              std::ostream& err) {
  synth::SynthSpec spec = so.spec;
  if (o.seed) spec.seed = *o.seed;
  const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
  fs::create_directories(dir);
  synth::SynthPair pair = synth::generate(spec);
  synth::AnomalyInjection inj = synth::inject_anomalies(
      pair.source, so.anomalies, derive_seed(spec.seed, 7), spec);

  const fs::path src = dir / "source.jsonl";
  const fs::path tgt = dir / "target.jsonl";
  const fs::path tgt_eval = dir / "target_eval.jsonl";
  text::write_corpus_jsonl(src, inj.corpus);
  text::write_corpus_jsonl(tgt, pair.target.without_labels());
  text::write_corpus_jsonl(tgt_eval, pair.target);
  std::optional<fs::path> vec;
  if (so.vectors) {
    vec = dir / "vectors.txt";
    const synth::WordVectors wv = synth::topic_vectors(spec);
    text::write_word_vectors(*vec, wv.tokens, wv.values, wv.dim);
  }

  nlohmann::ordered_json j;
  j["source"] = src.string();
  j["target"] = tgt.string();
  j["target_eval"] = tgt_eval.string();
  if (vec) j["vectors"] = vec->string();
  j["n_source"] = inj.corpus.size();
  j["n_target"] = pair.target.size();
  j["shift"] = spec.shift;
  j["signal_strength"] = spec.signal_strength;
  j["seed"] = spec.seed;
  j["shared_bayes_accuracy"] = synth::shared_bayes_accuracy(spec);
  auto ids = nlohmann::ordered_json::array();
  for (std::size_t i : inj.replaced) ids.push_back(inj.corpus.posts[i].id);
  j["anomalies"] = std::move(ids);
  out << j.dump(2) << '\n';
  err << "wrote " << inj.corpus.size() << " source posts ("
      << inj.replaced.size() << " anomalies) and " << pair.target.size()
      << " target posts to " << dir.string() << '\n';
  return 0;
}

int run_mmd(const CommonOpts& o, std::ostream& out, std::ostream& err) {
  const auto config = resolve_config(o);
  const auto source = need_corpus(o.source, "--source", text::CorpusRole::kSource);
  const auto target = need_corpus(o.target, "--target", text::CorpusRole::kTarget);
  const auto prep = train::prepare(source, target, config);
  out << shift_json(prep.shift).dump(2) << '\n';
  char line[128];
  std::snprintf(line, sizeof line, "d_k %.6f  d* %.3f  gate %s\n",
                prep.shift.d_k, prep.shift.d_star,
                prep.shift.gate_open ? "open" : "closed");
  err << line;
  return 0;
}

int run_train(const CommonOpts& o, std::ostream& out, std::ostream& err) {
  const auto config = resolve_config(o);
  const auto source = need_corpus(o.source, "--source", text::CorpusRole::kSource);
  const auto target = need_corpus(o.target, "--target", text::CorpusRole::kTarget);
  if (o.out.empty()) throw ConfigError("--out (checkpoint path) is required");
  auto result = train::train(source, target, config);

  save_checkpoint(o.out, result.params, config);
  const fs::path csv = o.csv.empty() ? fs::path(o.out + ".history.csv")
                                     : fs::path(o.csv);
  train::write_history_csv(csv, result.history);
  std::optional<fs::path> best;
  if (result.best_params) {
    best = fs::path(o.out + ".best");
    save_checkpoint(*best, *result.best_params, config);
  }

  nlohmann::ordered_json j;
  j["checkpoint"] = o.out;
  j["history"] = csv.string();
  j["shift"] = shift_json(result.shift);
  j["epochs"] = result.history.size();
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    j["final"] = {{"loss_yw", last.loss_yw},
                  {"loss_ew", last.loss_ew},
                  {"loss_pe", last.loss_pe},
                  {"source_accuracy", last.source_accuracy},
                  {"weight_mean", last.weight_mean}};
  }
  if (best) {
    j["best_checkpoint"] = best->string();
    j["best_epoch"] = result.best_epoch;
  }
  out << j.dump(2) << '\n';

  char line[160];
  std::snprintf(line, sizeof line, "%5s %10s %10s %10s %8s %8s %8s\n", "epoch",
                "L_yw", "L_ew", "L_pe", "src_acc", "tgt_acc", "w_mean");
  err << line;
  for (const auto& r : result.history) {
    char tgt[16] = "-";
    if (r.target_accuracy) std::snprintf(tgt, sizeof tgt, "%.4f", *r.target_accuracy);
    std::snprintf(line, sizeof line, "%5zu %10.5f %10.5f %10.5f %8.4f %8s %8.4f\n",
                  r.epoch, r.loss_yw, r.loss_ew, r.loss_pe, r.source_accuracy,
                  tgt, r.weight_mean);
    err << line;
  }
  return 0;
}

int run_eval(const CommonOpts& o, std::ostream& out, std::ostream& err) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const std::string& path = o.target.empty() ? o.source : o.target;
  const auto test = need_corpus(path, "--target", text::CorpusRole::kTarget);
  Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto report = eval::evaluate(ck.params, test);
  out << eval::to_json(report).dump(2) << '\n';
  err << eval::format_table(report);
  if (!o.csv.empty()) eval::write_text(o.csv, eval::metrics_csv(report));
  return 0;
}

int run_weights(const CommonOpts& o, std::ostream& out, std::ostream& err) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const auto source = need_corpus(o.source, "--source", text::CorpusRole::kSource);
  Checkpoint ck = load_checkpoint(o.checkpoint);
  const auto ranking = eval::export_weights(ck.params, source, o.top);
  out << eval::to_json(ranking).dump(2) << '\n';
  err << eval::format_table(ranking);
  if (!o.csv.empty()) eval::write_text(o.csv, eval::weights_csv(ranking));
  return 0;
}

void add_train_flags(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config, "Flat JSON config file");
  sub->add_option("--seed", o.seed, "Random seed");
  sub->add_option("--d-star", o.d_star, "Shift gate threshold");
  sub->add_option("--weighting", o.weighting, "Weighting mode")
      ->check(CLI::IsMember({"auto", "on", "off"}));
  sub->add_option("--lambda", o.lambda, "Gradient reversal gain");
  sub->add_option("--mu", o.mu, "Pseudo-event loss weight");
  sub->add_option("--epochs", o.epochs, "Number of epochs");
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"Event-adaptive fake news detector", "metadetector"};
  app.require_subcommand(1);
  CommonOpts o;
  SynthOpts so;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic event pair");
  synth_cmd->add_option("--seed", o.seed, "Random seed");
  synth_cmd->add_option("--out", o.out, "Output directory");
  synth_cmd->add_option("--n-source", so.spec.n_source);
  synth_cmd->add_option("--n-target", so.spec.n_target);
  synth_cmd->add_option("--shared-vocab", so.spec.shared_vocab_size);
  synth_cmd->add_option("--specific-vocab", so.spec.specific_vocab_size);
  synth_cmd->add_option("--shift", so.spec.shift);
  synth_cmd->add_option("--signal", so.spec.signal_strength);
  synth_cmd->add_option("--signal-tokens", so.spec.signal_tokens);
  synth_cmd->add_option("--fake-ratio", so.spec.fake_ratio);
  synth_cmd->add_option("--post-length", so.spec.post_length);
  synth_cmd->add_option("--label-bias", so.spec.source_label_bias);
  synth_cmd->add_option("--anomalies", so.anomalies,
                        "Fraction of source posts replaced by noise");
  synth_cmd->add_flag("--vectors", so.vectors,
                      "Also write topic-structured word vectors");
  synth_cmd->add_option("--vector-dim", so.spec.vector_dim);
  synth_cmd->add_option("--topic-offset", so.spec.topic_offset);
  synth_cmd->add_option("--vector-noise", so.spec.vector_noise);

  auto* mmd_cmd = app.add_subcommand("mmd", "Measure the source/target shift");
  mmd_cmd->add_option("--source", o.source)->required();
  mmd_cmd->add_option("--target", o.target)->required();
  add_train_flags(mmd_cmd, o);

  auto* train_cmd = app.add_subcommand("train", "Train and write a checkpoint");
  train_cmd->add_option("--source", o.source)->required();
  train_cmd->add_option("--target", o.target)->required();
  train_cmd->add_option("--out", o.out, "Checkpoint path")->required();
  train_cmd->add_option("--csv", o.csv, "History CSV path");
  add_train_flags(train_cmd, o);

  auto* eval_cmd = app.add_subcommand("eval", "Score a labeled corpus");
  eval_cmd->add_option("--checkpoint", o.checkpoint)->required();
  eval_cmd->add_option("--target", o.target, "Labeled test corpus")->required();
  eval_cmd->add_option("--csv", o.csv, "Metrics CSV path");

  auto* weights_cmd = app.add_subcommand("weights", "Rank source posts by weight");
  weights_cmd->add_option("--checkpoint", o.checkpoint)->required();
  weights_cmd->add_option("--source", o.source)->required();
  weights_cmd->add_option("--top", o.top, "Entries per list");
  weights_cmd->add_option("--csv", o.csv, "Full ranking CSV path");

  std::vector<const char*> argv;
  argv.push_back("metadetector");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(so, o, out, err);
    if (mmd_cmd->parsed()) return run_mmd(o, out, err);
    if (train_cmd->parsed()) return run_train(o, out, err);
    if (eval_cmd->parsed()) return run_eval(o, out, err);
    if (weights_cmd->parsed()) return run_weights(o, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace metadet
