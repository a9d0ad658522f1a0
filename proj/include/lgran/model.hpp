#pragma once

#include "lgran/autodiff.hpp"
#include "lgran/config.hpp"
#include "lgran/graph_attention.hpp"
#include "lgran/language.hpp"
#include "lgran/matching.hpp"
#include "lgran/params.hpp"
#include "lgran/scene_graph.hpp"

#include <array>
#include <random>
#include <vector>

namespace lgran {

struct ModelParams {
  LanguageParams language;
  GraphAttentionParams graph;
  MatchingParams matching;
};

/// Which paths a variant runs. Every variant owns the full parameter set;
/// parameters off its path simply receive zero gradient.
struct VariantWiring {
  bool decomposed_language;  // false: final Bi-LSTM state, subject score only
  bool edges;
  bool node_attention;
  bool edge_attention;
};

VariantWiring wiring(Variant v) noexcept;

class Model {
 public:
  Model(const ModelConfig& config, std::size_t vocab_size);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  ParamStore& store() noexcept { return store_; }
  const ParamStore& store() const noexcept { return store_; }
  const ModelParams& params() const noexcept { return params_; }

 private:
  ModelConfig config_;
  std::size_t vocab_size_;
  ParamStore store_;
  ModelParams params_;
};

/// Everything one forward pass records. Vars that a variant does not compute
/// stay invalid.
struct ForwardPass {
  LanguageEncoding language;
  LanguageDecomposition decomposition;
  EncodedGraph encoded;
  ad::Var node_attention;
  ad::Var intra_attention;
  ad::Var inter_attention;
  AttendedRepresentation attended;
  ad::Var p_obj, p_intra, p_inter;
  ad::Var scores;  // p, one per node
};

ForwardPass forward(ad::Tape& tape, const Model& model, const ObjectGraph& graph, const Expression& expr,
                    Mode mode, std::mt19937_64& rng);

/// Plain-value copies of every attention distribution. Edge attentions follow
/// the graph's edge-list order; an empty vector means "not computed" or "no
/// edges of that kind".
struct AttentionBundle {
  std::array<std::vector<double>, kComponents> token_attention;
  std::vector<double> component_weights;
  std::vector<double> node;
  std::vector<double> intra;
  std::vector<double> inter;
};

struct MatchResult {
  std::vector<double> p_obj, p_intra, p_inter;
  std::vector<double> scores;
  std::vector<double> prob;
  std::size_t predicted = 0;
};

struct Prediction {
  std::size_t index = 0;
  int region_id = 0;
  AttentionBundle attention;
  MatchResult match;
};

/// Eval-mode forward pass with argmax selection.
Prediction predict(const Model& model, const ObjectGraph& graph, const Expression& expr);

}  // namespace lgran
