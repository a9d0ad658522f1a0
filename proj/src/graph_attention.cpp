#include "lgran/graph_attention.hpp"

#include "lgran/errors.hpp"

namespace lgran {

MlpParams MlpParams::create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                            std::mt19937_64& rng) {
  MlpParams p;
  const Tensor::Shape vec{out};
  p.w1 = store.add(prefix + ".w1", xavier_uniform(out, in, rng));
  p.b1 = store.add(prefix + ".b1", Tensor(vec, 0.0));
  p.gamma1 = store.add(prefix + ".gamma1", Tensor(vec, 1.0));
  p.beta1 = store.add(prefix + ".beta1", Tensor(vec, 0.0));
  p.w2 = store.add(prefix + ".w2", xavier_uniform(out, out, rng));
  p.b2 = store.add(prefix + ".b2", Tensor(vec, 0.0));
  p.gamma2 = store.add(prefix + ".gamma2", Tensor(vec, 1.0));
  p.beta2 = store.add(prefix + ".beta2", Tensor(vec, 0.0));
  return p;
}

namespace {

ad::Var normalize(ad::Var x, ParamId gamma, ParamId beta, NormMode norm) {
  ad::Tape& t = *x.tape();
  switch (norm) {
    case NormMode::kLayer:
      return ad::layer_norm(x, t.param(gamma), t.param(beta));
    case NormMode::kBatch:
      return ad::batch_norm(x, t.param(gamma), t.param(beta));
    case NormMode::kNone:
      break;
  }
  return x;
}

}  // namespace

ad::Var encode_mlp(ad::Var x, const MlpParams& p, NormMode norm, double dropout, Mode mode,
                   std::mt19937_64& rng) {
  ad::Tape& t = *x.tape();
  ad::Var h = ad::linear(x, t.param(p.w1), t.param(p.b1));
  h = ad::relu(normalize(h, p.gamma1, p.beta1, norm));
  h = ad::dropout(h, dropout, mode, rng);
  h = ad::linear(h, t.param(p.w2), t.param(p.b2));
  return ad::relu(normalize(h, p.gamma2, p.beta2, norm));
}

AttentionHead AttentionHead::create(ParamStore& store, const std::string& prefix, std::size_t embed,
                                    std::size_t in, std::size_t attention, std::mt19937_64& rng) {
  AttentionHead h;
  h.w_lang = store.add(prefix + ".w_lang", xavier_uniform(attention, embed, rng));
  h.w_graph = store.add(prefix + ".w_graph", xavier_uniform(attention, in, rng));
  h.w_score = store.add(prefix + ".w_score", xavier_uniform_vector(attention, attention, 1, rng));
  return h;
}

ad::Var attention_scores(ad::Var rows, ad::Var lang, const AttentionHead& head) {
  ad::Tape& t = *rows.tape();
  ad::Var fused = ad::add_bias(ad::linear(rows, t.param(head.w_graph)), ad::matvec(t.param(head.w_lang), lang));
  return ad::rows_dot(ad::tanh(fused), t.param(head.w_score));
}

GraphAttentionParams GraphAttentionParams::create(ParamStore& store, const ModelConfig& config,
                                                  std::mt19937_64& rng) {
  const auto& d = config.dims;
  const std::size_t dv = config.appearance_dim;
  GraphAttentionParams p;
  p.node_visual = MlpParams::create(store, "graph.enc_visual", dv, d.encoder, rng);
  p.node_spatial = MlpParams::create(store, "graph.enc_spatial", 5, d.encoder, rng);
  p.intra_edge = MlpParams::create(store, "graph.enc_intra", 5, d.encoder, rng);
  p.inter_edge = MlpParams::create(store, "graph.enc_inter", 5 + dv + 5, d.encoder, rng);
  p.node = AttentionHead::create(store, "graph.attn_node", d.embed, 2 * d.encoder, d.attention, rng);
  p.intra = AttentionHead::create(store, "graph.attn_intra", d.embed, d.encoder, d.attention, rng);
  p.inter = AttentionHead::create(store, "graph.attn_inter", d.embed, d.encoder, d.attention, rng);
  return p;
}

namespace {

Tensor edge_matrix(const std::vector<GraphEdge>& edges) {
  Tensor m = Tensor::matrix(edges.size(), 5);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    for (std::size_t c = 0; c < 5; ++c) m.at(e, c) = edges[e].feature[c];
  }
  return m;
}

}  // namespace

EncodedGraph encode_graph(ad::Tape& tape, const ObjectGraph& graph, const GraphAttentionParams& params,
                          const ModelConfig& config, Mode mode, std::mt19937_64& rng) {
  if (graph.node_count == 0) throw Error(ErrorKind::kGeneric, "graph has no nodes");
  if (graph.appearance_dim() != config.appearance_dim) {
    throw IncompatibleError("appearance dim " + std::to_string(graph.appearance_dim()) +
                                              " does not match the model's " +
                                              std::to_string(config.appearance_dim));
  }
  const double rate = config.dropout;
  EncodedGraph enc;
  ad::Var v = encode_mlp(tape.constant(graph.appearance), params.node_visual, config.norm, rate, mode, rng);
  ad::Var l = encode_mlp(tape.constant(graph.spatial), params.node_spatial, config.norm, rate, mode, rng);
  enc.nodes = ad::concat_cols(v, l);
  if (!graph.intra_edges.empty()) {
    enc.intra = encode_mlp(tape.constant(edge_matrix(graph.intra_edges)), params.intra_edge, config.norm, rate,
                           mode, rng);
  }
  if (!graph.inter_edges.empty()) {
    // The far endpoint enters raw, next to the relative geometry.
    const Tensor raw = graph.node_features();
    const std::size_t width = raw.cols();
    Tensor in = Tensor::matrix(graph.inter_edges.size(), 5 + width);
    for (std::size_t e = 0; e < graph.inter_edges.size(); ++e) {
      const auto& edge = graph.inter_edges[e];
      for (std::size_t c = 0; c < 5; ++c) in.at(e, c) = edge.feature[c];
      for (std::size_t c = 0; c < width; ++c) in.at(e, 5 + c) = raw.at(edge.dst, c);
    }
    enc.inter = encode_mlp(tape.constant(std::move(in)), params.inter_edge, config.norm, rate, mode, rng);
  }
  return enc;
}

ad::Var node_attention(const EncodedGraph& enc, ad::Var s_sub, const GraphAttentionParams& params) {
  return ad::softmax(attention_scores(enc.nodes, s_sub, params.node));
}

ad::Var intra_edge_attention(const ObjectGraph& graph, const EncodedGraph& enc, ad::Var s_intra,
                             const GraphAttentionParams& params) {
  if (!enc.intra.valid()) return {};
  return ad::segment_softmax(attention_scores(enc.intra, s_intra, params.intra), graph.intra_offsets);
}

ad::Var inter_edge_attention(const ObjectGraph& graph, const EncodedGraph& enc, ad::Var s_inter,
                             const GraphAttentionParams& params) {
  if (!enc.inter.valid()) return {};
  return ad::segment_softmax(attention_scores(enc.inter, s_inter, params.inter), graph.inter_offsets);
}

namespace {

ad::Var aggregate_edges(ad::Tape& tape, std::size_t nodes, std::size_t width, ad::Var edges, ad::Var attn,
                        const std::vector<std::size_t>& offsets, std::size_t edge_count) {
  if (!edges.valid()) return tape.constant(Tensor::matrix(nodes, width));
  if (offsets.size() != nodes + 1 || edges.value().rows() != edge_count) {
    throw Error(ErrorKind::kGeneric, "edge encodings do not match the graph");
  }
  if (!attn.valid()) attn = tape.constant(Tensor(Tensor::Shape{edge_count}, 1.0));
  return ad::segment_weighted_sum(attn, edges, offsets);
}

}  // namespace

AttendedRepresentation aggregate(ad::Tape& tape, const ObjectGraph& graph, const EncodedGraph& enc,
                                 std::size_t encoder_dim, ad::Var node_attn, ad::Var intra_attn,
                                 ad::Var inter_attn) {
  const std::size_t n = graph.node_count;
  AttendedRepresentation r;
  r.obj = node_attn.valid() ? ad::scale_rows(enc.nodes, node_attn) : enc.nodes;
  r.intra = aggregate_edges(tape, n, encoder_dim, enc.intra, intra_attn, graph.intra_offsets,
                            graph.intra_edges.size());
  r.inter = aggregate_edges(tape, n, encoder_dim, enc.inter, inter_attn, graph.inter_offsets,
                            graph.inter_edges.size());
  return r;
}

}  // namespace lgran
