#include "crs/errors.hpp"
#include "crs/models.hpp"
#include "json.hpp"

namespace crs::models {

namespace {

constexpr int kFormatVersion = 1;

ModelKind parse_kind(const std::string& text) {
  for (auto k : {ModelKind::LogReg, ModelKind::GaussianNB, ModelKind::MLP}) {
    if (to_string(k) == text) return k;
  }
  throw ValidationError("model file: unknown kind '" + text + "'");
}

std::size_t expected_parameters(ModelKind kind, const std::vector<std::size_t>& shape) {
  const std::size_t d = shape.at(0);
  switch (kind) {
    case ModelKind::LogReg: return d + 1;
    case ModelKind::GaussianNB: return 2 + 4 * d;
    case ModelKind::MLP: return shape.at(1) * d + 2 * shape.at(1) + 1;
  }
  return 0;
}

}  // namespace

std::string save_model_json(const TrainedModel& m) {
  nlohmann::json doc;
  doc["format"] = "crs-model";
  doc["version"] = kFormatVersion;
  doc["kind"] = std::string(to_string(m.kind));
  doc["shape"] = m.shape;
  doc["feature_names"] = m.feature_names;
  doc["schema_checksum"] = m.schema_checksum;
  doc["training_seed"] = m.training_seed;
  doc["loss"] = {{"kind", m.loss.kind == LossConfig::Kind::Focal ? "focal" : "weighted"},
                 {"gamma", m.loss.gamma},
                 {"alpha", m.loss.alpha}};
  doc["class_weights"] = {m.class_weights.w0, m.class_weights.w1};
  doc["decision_threshold"] = m.decision_threshold;
  if (m.platt) doc["platt"] = {{"a", m.platt->a}, {"b", m.platt->b}};
  doc["metadata"] = {{"final_train_loss", m.metadata.final_train_loss},
                     {"final_validation_loss", m.metadata.final_validation_loss},
                     {"epochs_run", m.metadata.epochs_run},
                     {"best_epoch", m.metadata.best_epoch},
                     {"iterations", m.metadata.iterations},
                     {"gradient_norm", m.metadata.gradient_norm},
                     {"converged", m.metadata.converged},
                     {"clamped_probabilities", m.metadata.clamped_probabilities}};
  doc["parameters"] = m.parameters;
  return doc.dump(1) + "\n";
}

TrainedModel load_model_json(std::string_view text,
                             std::optional<std::string_view> expected_schema_checksum) {
  TrainedModel m;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("format") != "crs-model" || doc.at("version") != kFormatVersion) {
      throw ValidationError("model file: unsupported format");
    }
    m.kind = parse_kind(doc.at("kind").get<std::string>());
    m.shape = doc.at("shape").get<std::vector<std::size_t>>();
    m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    m.schema_checksum = doc.at("schema_checksum").get<std::string>();
    m.training_seed = doc.at("training_seed").get<std::uint64_t>();
    const auto& loss = doc.at("loss");
    m.loss.kind = loss.at("kind") == "focal" ? LossConfig::Kind::Focal : LossConfig::Kind::Weighted;
    m.loss.gamma = loss.at("gamma").get<double>();
    m.loss.alpha = loss.at("alpha").get<double>();
    const auto weights = doc.at("class_weights").get<std::vector<double>>();
    if (weights.size() != 2) throw ValidationError("model file: class_weights must have 2 entries");
    m.class_weights = {weights[0], weights[1]};
    m.decision_threshold = doc.at("decision_threshold").get<double>();
    if (doc.contains("platt")) m.platt = PlattScaling{doc["platt"].at("a"), doc["platt"].at("b")};
    const auto& meta = doc.at("metadata");
    m.metadata.final_train_loss = meta.at("final_train_loss");
    m.metadata.final_validation_loss = meta.at("final_validation_loss");
    m.metadata.epochs_run = meta.at("epochs_run");
    m.metadata.best_epoch = meta.at("best_epoch");
    m.metadata.iterations = meta.at("iterations");
    m.metadata.gradient_norm = meta.at("gradient_norm");
    m.metadata.converged = meta.at("converged");
    m.metadata.clamped_probabilities = meta.at("clamped_probabilities");
    m.parameters = doc.at("parameters").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model file: ") + e.what());
  }
  if (m.shape.empty() || (m.kind == ModelKind::MLP && m.shape.size() != 2) ||
      m.feature_names.size() != m.shape.front() ||
      m.parameters.size() != expected_parameters(m.kind, m.shape)) {
    throw ValidationError("model file: parameter count does not match the declared shape");
  }
  if (expected_schema_checksum && *expected_schema_checksum != m.schema_checksum) {
    throw ValidationError("model was trained against schema " + m.schema_checksum +
                          " but the current schema is " + std::string(*expected_schema_checksum));
  }
  return m;
}

}  // namespace crs::models
