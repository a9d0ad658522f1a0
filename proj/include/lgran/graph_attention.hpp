#pragma once

#include "lgran/autodiff.hpp"
#include "lgran/config.hpp"
#include "lgran/params.hpp"
#include "lgran/scene_graph.hpp"

#include <random>
#include <string>

namespace lgran {

/// Two-layer encoder: linear, norm, ReLU, dropout, linear, norm, ReLU.
struct MlpParams {
  ParamId w1, b1, gamma1, beta1;
  ParamId w2, b2, gamma2, beta2;

  static MlpParams create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                          std::mt19937_64& rng);
};

ad::Var encode_mlp(ad::Var x, const MlpParams& p, NormMode norm, double dropout, Mode mode,
                   std::mt19937_64& rng);

/// Language-guided fusion score w^T tanh(W_s s + W_g x_i), one per row of x.
struct AttentionHead {
  ParamId w_lang;   // [attention, embed]
  ParamId w_graph;  // [attention, in]
  ParamId w_score;  // [attention]

  static AttentionHead create(ParamStore& store, const std::string& prefix, std::size_t embed, std::size_t in,
                              std::size_t attention, std::mt19937_64& rng);
};

ad::Var attention_scores(ad::Var rows, ad::Var lang, const AttentionHead& head);

struct GraphAttentionParams {
  MlpParams node_visual;   // v_i -> v^e_i
  MlpParams node_spatial;  // l_i -> l^e_i
  MlpParams intra_edge;    // e_ij -> e^intra_ij
  MlpParams inter_edge;    // [e_ij, v_j, l_j] -> e^inter_ij
  AttentionHead node;
  AttentionHead intra;
  AttentionHead inter;

  static GraphAttentionParams create(ParamStore& store, const ModelConfig& config, std::mt19937_64& rng);
};

/// Encoded features for one graph. Edge encodings are invalid Vars when the
/// graph has no edges of that kind.
struct EncodedGraph {
  ad::Var nodes;  // [N, 2 * encoder] = [v^e, l^e]
  ad::Var intra;  // [|E^intra|, encoder]
  ad::Var inter;  // [|E^inter|, encoder]
};

EncodedGraph encode_graph(ad::Tape& tape, const ObjectGraph& graph, const GraphAttentionParams& params,
                          const ModelConfig& config, Mode mode, std::mt19937_64& rng);

/// Softmax over all nodes.
ad::Var node_attention(const EncodedGraph& enc, ad::Var s_sub, const GraphAttentionParams& params);
/// Softmax within each source node's neighbourhood, in edge-list order.
/// Invalid when the graph has no such edges.
ad::Var intra_edge_attention(const ObjectGraph& graph, const EncodedGraph& enc, ad::Var s_intra,
                             const GraphAttentionParams& params);
ad::Var inter_edge_attention(const ObjectGraph& graph, const EncodedGraph& enc, ad::Var s_inter,
                             const GraphAttentionParams& params);

struct AttendedRepresentation {
  ad::Var obj;    // [N, 2 * encoder]
  ad::Var intra;  // [N, encoder]
  ad::Var inter;  // [N, encoder]
};

/// Attention-weighted node and neighbourhood features. An invalid attention
/// Var means "unattended": nodes pass through unscaled and edges are summed.
/// Nodes with no edges of a kind get a zero vector.
AttendedRepresentation aggregate(ad::Tape& tape, const ObjectGraph& graph, const EncodedGraph& enc,
                                 std::size_t encoder_dim, ad::Var node_attn, ad::Var intra_attn,
                                 ad::Var inter_attn);

}  // namespace lgran
