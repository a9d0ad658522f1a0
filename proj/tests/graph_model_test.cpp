#include "fd_oracle.hpp"
#include "lgran/errors.hpp"
#include "lgran/model.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lgran {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ModelConfig small_config(Variant v = Variant::kLgrans, NormMode norm = NormMode::kLayer) {
  ModelConfig c;
  c.dims = {6, 5, 4, 3};
  c.appearance_dim = 3;
  c.k = 2;
  c.norm = norm;
  c.variant = v;
  c.init_seed = 17;
  return c;
}

Region region(int id, std::string cat, BoundingBox box, std::vector<double> app) {
  Region r;
  r.id = id;
  r.category = std::move(cat);
  r.box = box;
  r.appearance = std::move(app);
  return r;
}

Scene random_scene(std::mt19937_64& rng, std::size_t n, std::size_t dv, const std::vector<std::string>& cats) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> c(0, cats.size() - 1);
  Scene s{640, 480, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double w = 20 + 200 * u(rng), h = 20 + 200 * u(rng);
    std::vector<double> app(dv);
    for (auto& a : app) a = 2 * u(rng) - 1;
    s.regions.push_back(region(static_cast<int>(i), cats[c(rng)], {u(rng) * (640 - w), u(rng) * (480 - h), w, h}, app));
  }
  return s;
}

// Perturbs every parameter so gamma/beta and biases are non-trivial too.
void jitter(Model& m, std::uint64_t seed, double amp = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  for (std::size_t i = 0; i < m.store().size(); ++i) {
    for (auto& v : m.store().value(m.store().at(i)).data()) v += u(rng);
  }
}

Expression some_expression(std::size_t vocab, std::mt19937_64& rng, std::size_t len) {
  std::uniform_int_distribution<std::size_t> tok(0, vocab - 1);
  Expression e;
  for (std::size_t t = 0; t < len; ++t) e.tokens.push_back(tok(rng));
  return e;
}

// ---- straight-line oracle over Eigen values ----

struct Oracle {
  const Model& m;
  MatrixXd M(ParamId id) const { return m.store().value(id).mat(); }
  VectorXd V(ParamId id) const { return m.store().value(id).vec(); }

  MatrixXd layer_norm(const MatrixXd& x, ParamId g, ParamId b) const {
    MatrixXd y(x.rows(), x.cols());
    for (long i = 0; i < x.rows(); ++i) {
      const double mu = x.row(i).mean();
      const double var = (x.row(i).array() - mu).square().mean();
      y.row(i) = ((x.row(i).array() - mu) / std::sqrt(var + 1e-5)).matrix();
      y.row(i) = y.row(i).cwiseProduct(V(g).transpose()) + V(b).transpose();
    }
    return y;
  }
  MatrixXd mlp(const MatrixXd& x, const MlpParams& p) const {
    MatrixXd h = (x * M(p.w1).transpose()).rowwise() + V(p.b1).transpose();
    h = layer_norm(h, p.gamma1, p.beta1).cwiseMax(0.0);
    h = (h * M(p.w2).transpose()).rowwise() + V(p.b2).transpose();
    return layer_norm(h, p.gamma2, p.beta2).cwiseMax(0.0);
  }
  VectorXd scores(const MatrixXd& rows, const VectorXd& s, const AttentionHead& a) const {
    VectorXd out(rows.rows());
    const VectorXd ls = M(a.w_lang) * s;
    for (long i = 0; i < rows.rows(); ++i) {
      out[i] = V(a.w_score).dot((M(a.w_graph) * rows.row(i).transpose() + ls).array().tanh().matrix());
    }
    return out;
  }
  VectorXd match(const VectorXd& s, const MatrixXd& x, Component c) const {
    const auto& mp = m.params().matching;
    const VectorXd l = (M(mp.w_lang[c]) * s).array().tanh();
    VectorXd out(x.rows());
    for (long i = 0; i < x.rows(); ++i) out[i] = (M(mp.w_obj[c]) * x.row(i).transpose()).array().tanh().matrix().dot(l);
    return out;
  }
};

VectorXd to_vec(const Tensor& t) { return t.vec(); }

void expect_near(const std::vector<double>& got, const VectorXd& want, double tol) {
  ASSERT_EQ(got.size(), static_cast<std::size_t>(want.size()));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "at " << i;
}

std::vector<double> vals(ad::Var v) {
  const auto d = v.value().data();
  return {d.begin(), d.end()};
}

TEST(GraphAttention, FullForwardMatchesStraightLineOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelConfig cfg = small_config();
    Model model(cfg, 9);
    jitter(model, 100 + trial);
    const Scene scene = random_scene(rng, 2 + trial % 5, 3, {"dog", "car"});
    const ObjectGraph g = build_graph(scene, cfg.k);
    const Expression e = some_expression(9, rng, 1 + trial % 6);
    ad::Tape tape(&model.store());
    std::mt19937_64 drop(0);
    const ForwardPass f = forward(tape, model, g, e, Mode::kEval, drop);

    const Oracle o{model};
    const auto& gp = model.params().graph;
    const VectorXd s_sub = to_vec(f.decomposition.features[kSubject].value());
    const VectorXd s_intra = to_vec(f.decomposition.features[kIntra].value());
    const VectorXd s_inter = to_vec(f.decomposition.features[kInter].value());
    const VectorXd w = to_vec(f.decomposition.weights.value());

    const std::size_t n = g.node_count;
    MatrixXd xe(n, 10);
    xe << o.mlp(g.appearance.mat(), gp.node_visual), o.mlp(g.spatial.mat(), gp.node_spatial);
    const VectorXd node_sc = o.scores(xe, s_sub, gp.node);
    const VectorXd a_obj = (node_sc.array() - node_sc.maxCoeff()).exp() / (node_sc.array() - node_sc.maxCoeff()).exp().sum();
    expect_near(vals(f.node_attention), a_obj, 1e-12);

    // Edge attention and aggregation, one neighbourhood at a time.
    MatrixXd x_intra = MatrixXd::Zero(n, 5), x_inter = MatrixXd::Zero(n, 5);
    const Tensor raw = g.node_features();
    for (int kind = 0; kind < 2; ++kind) {
      const auto& edges = kind == 0 ? g.intra_edges : g.inter_edges;
      std::vector<double> got = kind == 0 ? (f.intra_attention.valid() ? vals(f.intra_attention) : std::vector<double>{})
                                          : (f.inter_attention.valid() ? vals(f.inter_attention) : std::vector<double>{});
      ASSERT_EQ(got.size(), edges.size());
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> mine;
        for (std::size_t e = 0; e < edges.size(); ++e) {
          if (edges[e].src == i) mine.push_back(e);
        }
        if (mine.empty()) continue;
        MatrixXd in(mine.size(), kind == 0 ? 5 : 13);
        for (std::size_t r = 0; r < mine.size(); ++r) {
          const auto& ed = edges[mine[r]];
          for (int c = 0; c < 5; ++c) in(r, c) = ed.feature[c];
          if (kind == 1) for (int c = 0; c < 8; ++c) in(r, 5 + c) = raw.at(ed.dst, c);
        }
        const MatrixXd enc = o.mlp(in, kind == 0 ? gp.intra_edge : gp.inter_edge);
        const VectorXd sc = o.scores(enc, kind == 0 ? s_intra : s_inter, kind == 0 ? gp.intra : gp.inter);
        const VectorXd a = (sc.array() - sc.maxCoeff()).exp() / (sc.array() - sc.maxCoeff()).exp().sum();
        for (std::size_t r = 0; r < mine.size(); ++r) {
          EXPECT_NEAR(got[mine[r]], a[r], 1e-12);
          (kind == 0 ? x_intra : x_inter).row(i) += a[r] * enc.row(r);
        }
      }
    }
    MatrixXd x_obj = xe;
    for (std::size_t i = 0; i < n; ++i) x_obj.row(i) *= a_obj[i];
    const VectorXd p = w[0] * o.match(s_sub, x_obj, kSubject) + w[1] * o.match(s_intra, x_intra, kIntra) +
                       w[2] * o.match(s_inter, x_inter, kInter);
    expect_near(vals(f.scores), p, 1e-12);
  }
}

TEST(GraphAttention, SingleNodeGetsFullAttention) {
  Model model(small_config(), 5);
  Scene s{640, 480, {region(0, "dog", {10, 10, 50, 50}, {0.1, 0.2, 0.3})}};
  const ObjectGraph g = build_graph(s, 2);
  const Prediction p = predict(model, g, to_expression({"x"}, Vocabulary({"x"})));
  EXPECT_EQ(p.attention.node, std::vector<double>{1.0});
  EXPECT_TRUE(p.attention.intra.empty());
  EXPECT_TRUE(p.attention.inter.empty());
  EXPECT_EQ(p.index, 0u);
  EXPECT_EQ(p.match.prob, std::vector<double>{1.0});
}

TEST(GraphAttention, IdenticalNodesGiveUniformAttention) {
  Model model(small_config(), 5);
  jitter(model, 3);
  Scene s{640, 480, {}};
  for (int i = 0; i < 4; ++i) s.regions.push_back(region(i, "dog", {100, 100, 40, 40}, {0.5, -0.5, 0.1}));
  const ObjectGraph g = build_graph(s, 3);
  std::mt19937_64 rng(2);
  const Prediction p = predict(model, g, some_expression(5, rng, 4));
  for (double a : p.attention.node) EXPECT_NEAR(a, 0.25, 1e-12);
  // Every intra edge has the same geometry, so each neighbourhood is uniform over 3.
  for (double a : p.attention.intra) EXPECT_NEAR(a, 1.0 / 3.0, 1e-12);
  for (double q : p.match.prob) EXPECT_NEAR(q, 0.25, 1e-12);
}

TEST(GraphAttention, SingleEdgeNeighbourhoodHasWeightOne) {
  Model model(small_config(), 5);
  Scene s{640, 480, {region(0, "dog", {10, 10, 50, 50}, {1, 0, 0}), region(1, "dog", {300, 10, 50, 50}, {0, 1, 0}),
                     region(2, "car", {10, 300, 80, 60}, {0, 0, 1})}};
  const ObjectGraph g = build_graph(s, 1);
  const Prediction p = predict(model, g, to_expression({"x", "y"}, Vocabulary({"x", "y"})));
  ASSERT_EQ(p.attention.intra.size(), 2u);
  for (double a : p.attention.intra) EXPECT_DOUBLE_EQ(a, 1.0);
  for (double a : p.attention.inter) EXPECT_DOUBLE_EQ(a, 1.0);
}

TEST(GraphAttention, AllSameCategoryHasNoInterAttention) {
  std::mt19937_64 rng(4);
  Model model(small_config(), 7);
  for (int t = 0; t < 10; ++t) {
    const ObjectGraph g = build_graph(random_scene(rng, 4, 3, {"giraffe"}), 2);
    ad::Tape tape(&model.store());
    const ForwardPass f = forward(tape, model, g, some_expression(7, rng, 3), Mode::kEval, rng);
    EXPECT_FALSE(f.inter_attention.valid());
    for (double v : f.attended.inter.value().data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(GraphAttention, DistributionsAndConvexCombinations) {
  std::mt19937_64 rng(5);
  Model model(small_config(), 11);
  jitter(model, 9);
  for (int t = 0; t < 200; ++t) {
    const ObjectGraph g = build_graph(random_scene(rng, 1 + t % 8, 3, {"a", "b", "c"}), 2);
    ad::Tape tape(&model.store());
    const ForwardPass f = forward(tape, model, g, some_expression(11, rng, 1 + t % 7), Mode::kEval, rng);
    const auto node = vals(f.node_attention);
    EXPECT_NEAR(std::accumulate(node.begin(), node.end(), 0.0), 1.0, 1e-9);
    for (int kind = 0; kind < 2; ++kind) {
      ad::Var att = kind == 0 ? f.intra_attention : f.inter_attention;
      ad::Var enc = kind == 0 ? f.encoded.intra : f.encoded.inter;
      ad::Var agg = kind == 0 ? f.attended.intra : f.attended.inter;
      const auto& off = kind == 0 ? g.intra_offsets : g.inter_offsets;
      if (!att.valid()) continue;
      const Tensor& A = att.value();
      const Tensor& E = enc.value();
      const Tensor& X = agg.value();
      for (std::size_t i = 0; i < g.node_count; ++i) {
        if (off[i] == off[i + 1]) {
          for (std::size_t c = 0; c < X.cols(); ++c) EXPECT_EQ(X.at(i, c), 0.0);
          continue;
        }
        double s = 0.0;
        for (std::size_t e = off[i]; e < off[i + 1]; ++e) s += A[e];
        EXPECT_NEAR(s, 1.0, 1e-9);
        for (std::size_t c = 0; c < X.cols(); ++c) {
          double lo = E.at(off[i], c), hi = lo;
          for (std::size_t e = off[i]; e < off[i + 1]; ++e) lo = std::min(lo, E.at(e, c)), hi = std::max(hi, E.at(e, c));
          EXPECT_GE(X.at(i, c), lo - 1e-9);
          EXPECT_LE(X.at(i, c), hi + 1e-9);
        }
      }
    }
  }
}

TEST(GraphAttention, PermutingRegionsPermutesOutputs) {
  std::mt19937_64 rng(6);
  Model model(small_config(), 8);
  jitter(model, 4);
  for (int t = 0; t < 30; ++t) {
    Scene s = random_scene(rng, 5, 3, {"a", "b"});
    const Expression e = some_expression(8, rng, 5);
    std::vector<std::size_t> perm(s.regions.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // Permute region order but keep ids, so distance ties break identically.
    Scene q = s;
    for (std::size_t i = 0; i < perm.size(); ++i) q.regions[i] = s.regions[perm[i]];
    const Prediction a = predict(model, build_graph(s, 2), e);
    const Prediction b = predict(model, build_graph(q, 2), e);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      EXPECT_NEAR(b.attention.node[i], a.attention.node[perm[i]], 1e-12);
      EXPECT_NEAR(b.match.scores[i], a.match.scores[perm[i]], 1e-12);
    }
    EXPECT_EQ(a.region_id, b.region_id);
  }
}

TEST(Matching, SubjectOnlyWeightsGiveSubjectScore) {
  ad::Tape tape;
  ad::Var w = tape.constant(Tensor::vector({1, 0, 0}));
  ad::Var a = tape.constant(Tensor::vector({0.3, -1.2}));
  ad::Var b = tape.constant(Tensor::vector({5, 6}));
  ad::Var c = tape.constant(Tensor::vector({-7, 8}));
  EXPECT_EQ(vals(combine_scores(w, a, b, c)), (std::vector<double>{0.3, -1.2}));
}

TEST(Matching, ProbabilitiesAndLoss) {
  ad::Tape tape;
  const auto prob = vals(ad::softmax(tape.constant(Tensor::vector({0, std::log(3.0)}))));
  EXPECT_NEAR(prob[0], 0.25, 1e-15);
  EXPECT_NEAR(prob[1], 0.75, 1e-15);
  ad::Var uniform = tape.constant(Tensor::vector({2, 2, 2, 2}));
  EXPECT_NEAR(cross_entropy(uniform, 3).value().item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor::vector({700, 0})), 0).value().item(), 0.0, 1e-15);
  EXPECT_THROW(cross_entropy(uniform, 4), Error);
}

TEST(Matching, ArgmaxTiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{1, 3, 3, 2}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{5}), 0u);
  EXPECT_THROW(argmax(std::vector<double>{}), Error);
  std::vector<double> p{0.1, 0.7, 0.2};
  std::vector<double> q = p;
  for (auto& v : q) v += 123.0;
  EXPECT_EQ(argmax(p), argmax(q));
}

TEST(Model, PredictIsDeterministic) {
  std::mt19937_64 rng(7);
  Model model(small_config(), 6);
  const ObjectGraph g = build_graph(random_scene(rng, 5, 3, {"a", "b"}), 2);
  const Expression e = some_expression(6, rng, 4);
  const Prediction a = predict(model, g, e);
  const Prediction b = predict(model, g, e);
  EXPECT_EQ(a.match.scores, b.match.scores);
  EXPECT_EQ(a.attention.intra, b.attention.intra);
}

TEST(Model, AppearanceDimMismatchIsIncompatible) {
  Model model(small_config(), 6);
  Scene s{640, 480, {region(0, "dog", {10, 10, 50, 50}, {0.1, 0.2})}};
  EXPECT_THROW(predict(model, build_graph(s, 2), to_expression({"x"}, Vocabulary({"x"}))), IncompatibleError);
}

TEST(Model, VariantWiring) {
  std::mt19937_64 rng(8);
  const ObjectGraph g = build_graph(random_scene(rng, 5, 3, {"a", "b"}), 2);
  const Expression e = some_expression(6, rng, 4);
  for (Variant v : {Variant::kNodeRep, Variant::kGraphRep, Variant::kNodeAttn, Variant::kEdgeAttn, Variant::kLgrans}) {
    Model model(small_config(v), 6);
    const Prediction p = predict(model, g, e);
    const VariantWiring w = wiring(v);
    EXPECT_EQ(!p.attention.node.empty(), w.node_attention) << variant_name(v);
    EXPECT_EQ(!p.attention.component_weights.empty(), w.decomposed_language) << variant_name(v);
    EXPECT_EQ(!p.match.p_intra.empty(), w.edges) << variant_name(v);
    EXPECT_EQ(p.match.prob.size(), g.node_count);
  }
}

// End-to-end gradients of the loss against central differences, for every
// variant and normalization mode, in eval mode.
TEST(Model, LossGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  const Scene scene = random_scene(rng, 4, 3, {"a", "b"});
  const ObjectGraph g = build_graph(scene, 2);
  const Expression e = some_expression(6, rng, 5);
  for (Variant v : {Variant::kNodeRep, Variant::kGraphRep, Variant::kNodeAttn, Variant::kEdgeAttn, Variant::kLgrans}) {
    for (NormMode norm : {NormMode::kNone, NormMode::kBatch, NormMode::kLayer}) {
      if (norm != NormMode::kLayer && v != Variant::kLgrans) continue;
      Model model(small_config(v, norm), 6);
      jitter(model, 31);
      auto loss = [&](ad::Tape& tape) {
        std::mt19937_64 unused(0);
        return cross_entropy(forward(tape, model, g, e, Mode::kEval, unused).scores, 2);
      };
      ad::Tape tape(&model.store());
      Gradients grads(model.store());
      tape.backward(loss(tape), grads);
      double worst = 0.0;
      for (std::size_t i = 0; i < model.store().size(); ++i) {
        const ParamId id = model.store().at(i);
        const Tensor keep = model.store().value(id);
        const Tensor numeric = testing::central_difference(
            [&](const Tensor& x) {
              model.store().value(id) = x;
              ad::Tape t(&model.store());
              const double val = loss(t).value().item();
              model.store().value(id) = keep;
              return val;
            },
            keep);
        worst = std::max(worst, testing::max_relative_error(grads.get(id), numeric));
      }
      EXPECT_LT(worst, 1e-4) << variant_name(v) << " " << norm_mode_name(norm);
    }
  }
}

}  // namespace
}  // namespace lgran
