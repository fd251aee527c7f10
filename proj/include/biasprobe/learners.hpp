#pragma once

// Single entry point over the built-in families, plus a versioned JSON dump.

#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "biasprobe/errors.hpp"
#include "biasprobe/learners/classifier.hpp"
#include "biasprobe/learners/glm.hpp"
#include "biasprobe/learners/gp.hpp"
#include "biasprobe/learners/mlp.hpp"
#include "biasprobe/learners/spec.hpp"
#include "biasprobe/protocol.hpp"

namespace biasprobe {

inline constexpr int kModelFormatVersion = 1;

inline std::unique_ptr<ProbabilisticClassifier> train(const LearnerSpec& spec, const QuadrantTable& table,
                                                      std::uint64_t seed) {
  spec.validate();
  switch (spec.family) {
    case Family::Glm: return train_glm(table, spec.glm(), seed);
    case Family::Gp: return train_gp(table, spec.gp(), seed);
    case Family::Mlp: return train_mlp(table, spec.mlp(), seed);
    case Family::Blackbox: break;
  }
  throw InvalidSpec("black-box learners are trained through an adapter session");
}

inline nlohmann::json model_to_json(const ProbabilisticClassifier& model) {
  return {{"format_version", kModelFormatVersion}, {"name", model.name()}, {"model", model.to_json()}};
}

inline std::unique_ptr<ProbabilisticClassifier> model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw ParseError("unsupported model format version " + j.at("format_version").dump());
    }
    const auto& m = j.at("model");
    const std::string kind = m.at("kind");
    if (kind == "glm") return GlmModel::from_json(m);
    if (kind == "gp") return GpModel::from_json(m);
    if (kind == "mlp") return MlpModel::from_json(m);
    throw ParseError("unknown model kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model dump: ") + e.what());
  }
}

// Doubles are written with max_digits10 by nlohmann, so the round trip is exact.
inline void save_model(const ProbabilisticClassifier& model, std::ostream& os) { os << model_to_json(model).dump(); }

inline std::unique_ptr<ProbabilisticClassifier> load_model(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model dump: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace biasprobe
