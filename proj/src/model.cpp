#include "lgran/model.hpp"

#include "lgran/errors.hpp"

namespace lgran {

VariantWiring wiring(Variant v) noexcept {
  switch (v) {
    case Variant::kNodeRep:
      return {false, false, false, false};
    case Variant::kGraphRep:
      return {true, true, false, false};
    case Variant::kNodeAttn:
      return {true, true, true, false};
    case Variant::kEdgeAttn:
      return {true, true, false, true};
    case Variant::kLgrans:
      break;
  }
  return {true, true, true, true};
}

Model::Model(const ModelConfig& config, std::size_t vocab_size) : config_(config), vocab_size_(vocab_size) {
  validate(config_);
  if (vocab_size_ < 2) throw Error(ErrorKind::kUsage, "vocabulary must hold at least the reserved tokens");
  std::mt19937_64 rng(config_.init_seed);
  params_.language = LanguageParams::create(store_, vocab_size_, config_.dims, rng);
  params_.graph = GraphAttentionParams::create(store_, config_, rng);
  params_.matching = MatchingParams::create(store_, config_.dims, rng);
}

ForwardPass forward(ad::Tape& tape, const Model& model, const ObjectGraph& graph, const Expression& expr,
                    Mode mode, std::mt19937_64& rng) {
  if (tape.params() != &model.store()) throw TapeError("tape is not bound to the model's parameters");
  const ModelConfig& cfg = model.config();
  const ModelParams& p = model.params();
  const VariantWiring w = wiring(cfg.variant);

  ForwardPass f;
  f.language = encode_expression(tape, expr, p.language);
  f.encoded = encode_graph(tape, graph, p.graph, cfg, mode, rng);

  if (!w.decomposed_language) {
    f.attended.obj = f.encoded.nodes;
    f.p_obj = component_scores(f.language.final_state, f.attended.obj, p.matching, kSubject);
    f.scores = f.p_obj;
    return f;
  }

  f.decomposition = decompose(f.language, p.language);
  const auto& s = f.decomposition.features;
  if (w.node_attention) f.node_attention = node_attention(f.encoded, s[kSubject], p.graph);
  if (w.edge_attention) {
    f.intra_attention = intra_edge_attention(graph, f.encoded, s[kIntra], p.graph);
    f.inter_attention = inter_edge_attention(graph, f.encoded, s[kInter], p.graph);
  }
  f.attended = aggregate(tape, graph, f.encoded, cfg.dims.encoder, f.node_attention, f.intra_attention,
                         f.inter_attention);
  f.p_obj = component_scores(s[kSubject], f.attended.obj, p.matching, kSubject);
  f.p_intra = component_scores(s[kIntra], f.attended.intra, p.matching, kIntra);
  f.p_inter = component_scores(s[kInter], f.attended.inter, p.matching, kInter);
  f.scores = combine_scores(f.decomposition.weights, f.p_obj, f.p_intra, f.p_inter);
  return f;
}

namespace {

std::vector<double> values(ad::Var v) {
  if (!v.valid()) return {};
  const auto d = v.value().data();
  return {d.begin(), d.end()};
}

}  // namespace

Prediction predict(const Model& model, const ObjectGraph& graph, const Expression& expr) {
  ad::Tape tape(&model.store());
  std::mt19937_64 unused(0);
  const ForwardPass f = forward(tape, model, graph, expr, Mode::kEval, unused);

  Prediction out;
  for (std::size_t m = 0; m < kComponents; ++m) {
    out.attention.token_attention[m] = values(f.decomposition.token_attention[m]);
  }
  out.attention.component_weights = values(f.decomposition.weights);
  out.attention.node = values(f.node_attention);
  out.attention.intra = values(f.intra_attention);
  out.attention.inter = values(f.inter_attention);

  out.match.p_obj = values(f.p_obj);
  out.match.p_intra = values(f.p_intra);
  out.match.p_inter = values(f.p_inter);
  out.match.scores = values(f.scores);
  out.match.prob = values(ad::softmax(f.scores));
  out.match.predicted = argmax(out.match.scores);
  out.index = out.match.predicted;
  out.region_id = graph.region_ids.at(out.index);
  return out;
}

}  // namespace lgran
