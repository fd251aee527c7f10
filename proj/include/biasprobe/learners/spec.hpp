#pragma once

// Learner specifications and their canonical names:
//   GLM:lin  GLM:Φ  GLM:l1  GLM:l2        (logistic regression)
//   GP:fit   GP:<lengthscale>             (RBF Gaussian-process classifier)
//   NN:<width>h<depth>d                   (ReLU feed-forward network)

#include <charconv>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "biasprobe/errors.hpp"

namespace biasprobe {

enum class FeatureSet { Linear, Phi };
enum class Penalty { None, L1, L2 };

struct GlmVariant {
  FeatureSet features = FeatureSet::Linear;
  Penalty penalty = Penalty::None;
  double penalty_weight = 1.0;
  double alpha_scale = 3.0;  // normaliser of the interaction feature
};

struct GpVariant {
  std::optional<double> lengthscale;  // empty: fit by marginal likelihood
  double signal_variance = 1.0;       // used when the lengthscale is fixed
  std::size_t size_cap = 2000;
};

struct MlpVariant {
  std::vector<std::size_t> hidden_widths{16};
};

struct AdapterVariant {
  std::string label = "adapter";
};

enum class Family { Glm, Gp, Mlp, Blackbox };

struct LearnerSpec {
  Family family = Family::Glm;
  std::variant<GlmVariant, GpVariant, MlpVariant, AdapterVariant> variant = GlmVariant{};

  const GlmVariant& glm() const { return std::get<GlmVariant>(variant); }
  const GpVariant& gp() const { return std::get<GpVariant>(variant); }
  const MlpVariant& mlp() const { return std::get<MlpVariant>(variant); }

  void validate() const {
    switch (family) {
      case Family::Glm:
        if (!(glm().penalty_weight >= 0.0)) throw InvalidSpec("penalty_weight must be >= 0");
        if (!(glm().alpha_scale > 0.0)) throw InvalidSpec("alpha_scale must be > 0");
        break;
      case Family::Gp:
        if (gp().lengthscale && !(*gp().lengthscale > 0.0)) throw InvalidSpec("lengthscale must be > 0");
        if (!(gp().signal_variance > 0.0)) throw InvalidSpec("signal_variance must be > 0");
        break;
      case Family::Mlp:
        if (mlp().hidden_widths.empty()) throw InvalidSpec("MLP needs at least one hidden layer");
        for (auto w : mlp().hidden_widths) {
          if (w == 0) throw InvalidSpec("hidden widths must be positive");
        }
        break;
      case Family::Blackbox: break;
    }
  }

  std::string name() const;
};

namespace detail {

inline std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  std::string s = os.str();
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::size_t> parse_size(std::string_view s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

inline std::string LearnerSpec::name() const {
  switch (family) {
    case Family::Glm: {
      const auto& g = glm();
      std::string base;
      if (g.features == FeatureSet::Linear) {
        base = g.penalty == Penalty::None ? "lin" : g.penalty == Penalty::L1 ? "lin-l1" : "lin-l2";
      } else {
        base = g.penalty == Penalty::None ? "Φ" : g.penalty == Penalty::L1 ? "l1" : "l2";
      }
      if (g.penalty != Penalty::None && g.penalty_weight != 1.0) base += "@" + detail::format_number(g.penalty_weight);
      return "GLM:" + base;
    }
    case Family::Gp:
      return "GP:" + (gp().lengthscale ? detail::format_number(*gp().lengthscale) : std::string("fit"));
    case Family::Mlp: {
      const auto& w = mlp().hidden_widths;
      bool uniform = true;
      for (auto v : w) uniform = uniform && v == w.front();
      if (uniform) return "NN:" + std::to_string(w.front()) + "h" + std::to_string(w.size()) + "d";
      std::string s = "NN:";
      for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "-" : "") + std::to_string(w[i]);
      return s;
    }
    case Family::Blackbox:
      return "BB:" + std::get<AdapterVariant>(variant).label;
  }
  return "?";
}

// Inverse of LearnerSpec::name(). "GLM:phi" is accepted as an ASCII alias.
inline LearnerSpec parse_learner(const std::string& name) {
  const auto colon = name.find(':');
  if (colon == std::string::npos) throw UsageError("unknown model name '" + name + "'");
  const std::string family = name.substr(0, colon);
  std::string rest = name.substr(colon + 1);
  LearnerSpec spec;

  if (family == "GLM") {
    GlmVariant g;
    if (auto at = rest.find('@'); at != std::string::npos) {
      auto w = detail::parse_double(std::string_view(rest).substr(at + 1));
      if (!w) throw UsageError("bad penalty weight in '" + name + "'");
      g.penalty_weight = *w;
      rest = rest.substr(0, at);
    }
    if (rest == "lin") {
      g.features = FeatureSet::Linear;
    } else if (rest == "Φ" || rest == "phi") {
      g.features = FeatureSet::Phi;
    } else if (rest == "l1" || rest == "l2") {
      g.features = FeatureSet::Phi;
      g.penalty = rest == "l1" ? Penalty::L1 : Penalty::L2;
    } else if (rest == "lin-l1" || rest == "lin-l2") {
      g.penalty = rest == "lin-l1" ? Penalty::L1 : Penalty::L2;
    } else {
      throw UsageError("unknown model name '" + name + "'");
    }
    spec.family = Family::Glm;
    spec.variant = g;
  } else if (family == "GP") {
    GpVariant g;
    if (rest != "fit") {
      auto l = detail::parse_double(rest);
      if (!l || !(*l > 0.0)) throw UsageError("unknown model name '" + name + "'");
      g.lengthscale = *l;
    }
    spec.family = Family::Gp;
    spec.variant = g;
  } else if (family == "NN") {
    MlpVariant m;
    m.hidden_widths.clear();
    const auto h = rest.find('h');
    if (h != std::string::npos && !rest.empty() && rest.back() == 'd') {
      auto width = detail::parse_size(std::string_view(rest).substr(0, h));
      auto depth = detail::parse_size(std::string_view(rest).substr(h + 1, rest.size() - h - 2));
      if (!width || !depth || *width == 0 || *depth == 0) throw UsageError("unknown model name '" + name + "'");
      m.hidden_widths.assign(*depth, *width);
    } else {
      std::stringstream ss(rest);
      std::string tok;
      while (std::getline(ss, tok, '-')) {
        auto w = detail::parse_size(tok);
        if (!w || *w == 0) throw UsageError("unknown model name '" + name + "'");
        m.hidden_widths.push_back(*w);
      }
      if (m.hidden_widths.empty()) throw UsageError("unknown model name '" + name + "'");
    }
    spec.family = Family::Mlp;
    spec.variant = m;
  } else {
    throw UsageError("unknown model family in '" + name + "'");
  }
  spec.validate();
  return spec;
}

}  // namespace biasprobe
