#include "metadetector/checkpoint.hpp"

#include <cstdio>
#include <fstream>

#include "metadetector/errors.hpp"

namespace metadet {

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

nlohmann::ordered_json checkpoint_to_json(const model::ModelParams& params,
                                          const train::TrainConfig& config) {
  nlohmann::ordered_json j;
  j["format"] = "metadetector-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = params.seed;
  j["vocab_hash"] = hex64(params.vocab.hash());
  j["vocab"] = {{"min_count", params.vocab.min_count()},
                {"tokens", params.vocab.tokens()}};
  const model::ModelDims& d = params.dims;
  j["dims"] = {{"vocab_size", d.vocab_size},
               {"embedding_dim", d.embedding_dim},
               {"max_len", d.max_len},
               {"num_filters", d.num_filters},
               {"max_window", d.max_window},
               {"feature_dim", d.feature_dim},
               {"disc_hidden", d.disc_hidden}};
  j["embedding_trainable"] = params.extractor.embedding.trainable;
  j["config"] = train::config_to_json(config);
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params.named_tensors()) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = t->shape();
    e["values"] = std::vector<double>(t->values().begin(), t->values().end());
    tensors.push_back(std::move(e));
  }
  j["tensors"] = std::move(tensors);
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "metadetector-checkpoint") {
      throw DataError("not a metadetector checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw DataError("unsupported checkpoint version " +
                      j.at("version").dump());
    }
    text::Vocabulary vocab = text::Vocabulary::from_tokens(
        j.at("vocab").at("tokens").get<std::vector<std::string>>(),
        j.at("vocab").at("min_count").get<std::size_t>());
    const std::string stored_hash = j.at("vocab_hash").get<std::string>();
    if (hex64(vocab.hash()) != stored_hash) {
      throw DataError("vocabulary hash mismatch: checkpoint says " +
                      stored_hash + ", tokens hash to " + hex64(vocab.hash()));
    }
    const auto& jd = j.at("dims");
    model::ModelDims dims;
    dims.vocab_size = jd.at("vocab_size").get<std::size_t>();
    dims.embedding_dim = jd.at("embedding_dim").get<std::size_t>();
    dims.max_len = jd.at("max_len").get<std::size_t>();
    dims.num_filters = jd.at("num_filters").get<std::size_t>();
    dims.max_window = jd.at("max_window").get<std::size_t>();
    dims.feature_dim = jd.at("feature_dim").get<std::size_t>();
    dims.disc_hidden = jd.at("disc_hidden").get<std::size_t>();
    if (dims.vocab_size != vocab.size()) {
      throw DataError("checkpoint vocabulary has " +
                      std::to_string(vocab.size()) + " tokens, dims say " +
                      std::to_string(dims.vocab_size));
    }
    Checkpoint ck;
    ck.config = train::config_from_json(j.at("config"));
    text::EmbeddingTable table{ad::Tensor({dims.vocab_size, dims.embedding_dim}),
                               j.at("embedding_trainable").get<bool>()};
    ck.params = model::init_params(dims, std::move(vocab), std::move(table),
                                   j.at("seed").get<std::uint64_t>());
    const auto& jt = j.at("tensors");
    auto named = ck.params.named_tensors();
    if (jt.size() != named.size()) {
      throw DataError("checkpoint holds " + std::to_string(jt.size()) +
                      " tensors, model expects " + std::to_string(named.size()));
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto& [name, t] = named[i];
      const auto& e = jt[i];
      if (e.at("name").get<std::string>() != name) {
        throw DataError("checkpoint tensor " + std::to_string(i) + " is '" +
                        e.at("name").get<std::string>() + "', expected '" +
                        name + "'");
      }
      const auto shape = e.at("shape").get<ad::Shape>();
      if (shape != t->shape()) {
        throw DataError("tensor '" + name + "' has shape " +
                        ad::shape_str(shape) + ", model expects " +
                        ad::shape_str(t->shape()));
      }
      const auto values = e.at("values").get<std::vector<double>>();
      if (values.size() != t->size()) {
        throw DataError("tensor '" + name + "' holds " +
                        std::to_string(values.size()) + " values");
      }
      std::copy(values.begin(), values.end(), t->values().begin());
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path,
                     const model::ModelParams& params,
                     const train::TrainConfig& config) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out << checkpoint_to_json(params, config).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("malformed checkpoint '" + path.string() + "': " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace metadet
