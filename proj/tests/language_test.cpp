#include "fd_oracle.hpp"
#include "lgran/errors.hpp"
#include "lgran/language.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace lgran {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Vocabulary small_vocab() { return Vocabulary({"the", "tallest", "giraffe", "dog", "left", "of", "red"}); }

struct Fixture {
  ParamStore store;
  LanguageParams params;
  Vocabulary vocab = small_vocab();

  explicit Fixture(std::size_t embed = 8, std::uint64_t seed = 5) {
    std::mt19937_64 rng(seed);
    ModelDims dims;
    dims.embed = embed;
    params = LanguageParams::create(store, vocab.size(), dims, rng);
    // Random biases so the oracle sees non-trivial values everywhere.
    for (std::size_t i = 0; i < store.size(); ++i) {
      for (auto& v : store.value(store.at(i)).data()) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    }
  }
  MatrixXd m(ParamId id) const { return store.value(id).mat(); }
  VectorXd v(ParamId id) const { return store.value(id).vec(); }
};

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line reference: plain loops and Eigen products, no tape.
struct Reference {
  MatrixXd E, H;
  VectorXd pooled, final_state;
  std::array<VectorXd, 3> attn, feats;
  VectorXd weights;
};

std::vector<VectorXd> lstm_oracle(const Fixture& f, const LstmParams& p, const MatrixXd& E, bool reverse) {
  const MatrixXd wx = f.m(p.wx), wh = f.m(p.wh);
  const VectorXd b = f.v(p.b);
  const long h = wh.cols();
  const long T = E.rows();
  std::vector<VectorXd> out(T);
  VectorXd hs = VectorXd::Zero(h), cs = VectorXd::Zero(h);
  for (long s = 0; s < T; ++s) {
    const long t = reverse ? T - 1 - s : s;
    const VectorXd g = wx * E.row(t).transpose() + wh * hs + b;
    for (long k = 0; k < h; ++k) {
      const double i = sig(g[k]), fg = sig(g[h + k]), z = std::tanh(g[2 * h + k]), o = sig(g[3 * h + k]);
      cs[k] = fg * cs[k] + i * z;
      hs[k] = o * std::tanh(cs[k]);
    }
    out[t] = hs;
  }
  return out;
}

VectorXd softmax(const VectorXd& x) {
  const VectorXd e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

Reference reference(const Fixture& f, const std::vector<std::size_t>& tokens) {
  Reference r;
  const MatrixXd W = f.m(f.params.embed_w);
  const VectorXd b = f.v(f.params.embed_b);
  const long T = static_cast<long>(tokens.size());
  r.E.resize(T, W.cols());
  for (long t = 0; t < T; ++t) r.E.row(t) = (W.row(tokens[t]).transpose() + b).cwiseMax(0.0).transpose();
  const auto fw = lstm_oracle(f, f.params.forward, r.E, false);
  const auto bw = lstm_oracle(f, f.params.backward, r.E, true);
  const long h = fw[0].size();
  r.H.resize(T, 2 * h);
  for (long t = 0; t < T; ++t) r.H.row(t) << fw[t].transpose(), bw[t].transpose();
  r.pooled = r.E.colwise().sum().transpose();
  r.final_state.resize(2 * h);
  r.final_state << fw[T - 1], bw[0];
  for (int m = 0; m < 3; ++m) {
    r.attn[m] = softmax(r.H * f.v(f.params.token_attention[m]));
    r.feats[m] = r.E.transpose() * r.attn[m];
  }
  r.weights = softmax(f.m(f.params.component_weights) * r.pooled);
  return r;
}

void expect_near(const Tensor& got, const MatrixXd& want, double tol) {
  ASSERT_EQ(got.size(), static_cast<std::size_t>(want.size()));
  const RowMatrix w = want;
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], w.data()[i], tol) << "at " << i;
}

TEST(Vocabulary, ReservedIndicesAndSortedOrder) {
  const Vocabulary v({"zebra", "apple", "apple", "<unk>"});
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<pad>", "<unk>", "apple", "zebra"}));
  EXPECT_EQ(v.index("<pad>"), Vocabulary::kPad);
  EXPECT_EQ(v.index("zebra"), 3u);
  EXPECT_EQ(v.index("mango"), Vocabulary::kUnk);
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  const Vocabulary v = small_vocab();
  std::stringstream ss;
  v.save(ss);
  EXPECT_EQ(Vocabulary::load(ss), v);
  std::stringstream bad("dog\ncat\n");
  EXPECT_THROW(Vocabulary::load(bad), SchemaError);
}

TEST(Tokenize, TallestGiraffe) {
  const Vocabulary v = small_vocab();
  const Expression e = tokenize("the tallest giraffe", v);
  EXPECT_EQ(e.tokens, (std::vector<std::size_t>{v.index("the"), v.index("tallest"), v.index("giraffe")}));
  EXPECT_EQ(e.text, "the tallest giraffe");
}

TEST(Tokenize, CaseAndWhitespaceAreNormalized) {
  const Vocabulary v = small_vocab();
  EXPECT_EQ(tokenize("  The   RED\tdog ", v).tokens, tokenize("the red dog", v).tokens);
}

TEST(Tokenize, UnknownWordMapsToUnk) {
  const Expression e = tokenize("the purple dog", small_vocab());
  EXPECT_EQ(e.tokens[1], Vocabulary::kUnk);
}

TEST(Tokenize, EmptyIsAnError) {
  EXPECT_THROW(tokenize("", small_vocab()), Error);
  EXPECT_THROW(tokenize("   ", small_vocab()), Error);
}

TEST(LanguageParams, ShapesAndForgetBias) {
  ParamStore store;
  std::mt19937_64 rng(1);
  ModelDims dims;
  dims.embed = 6;
  const auto p = LanguageParams::create(store, 10, dims, rng);
  EXPECT_EQ(store.value(p.embed_w).shape(), (Tensor::Shape{10, 6}));
  EXPECT_EQ(store.value(p.forward.wx).shape(), (Tensor::Shape{12, 6}));
  EXPECT_EQ(store.value(p.forward.wh).shape(), (Tensor::Shape{12, 3}));
  EXPECT_EQ(store.value(p.component_weights).shape(), (Tensor::Shape{3, 6}));
  EXPECT_EQ(store.value(p.token_attention[2]).shape(), (Tensor::Shape{6}));
  const Tensor& b = store.value(p.backward.b);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(b[i], (i >= 3 && i < 6) ? 1.0 : 0.0);
}

// One token: the recurrence is a single step from zero state, written out by hand.
TEST(Encode, SingleTokenMatchesHandStep) {
  Fixture f(4);
  const std::size_t tok = f.vocab.index("dog");
  ad::Tape tape(&f.store);
  const auto enc = encode_expression(tape, to_expression({"dog"}, f.vocab), f.params);
  const MatrixXd W = f.m(f.params.embed_w);
  const VectorXd e = (W.row(tok).transpose() + f.v(f.params.embed_b)).cwiseMax(0.0);
  auto step = [&](const LstmParams& p) {
    const VectorXd g = f.m(p.wx) * e + f.v(p.b);
    VectorXd h(2);
    for (int k = 0; k < 2; ++k) h[k] = sig(g[6 + k]) * std::tanh(sig(g[k]) * std::tanh(g[4 + k]));
    return h;
  };
  VectorXd want(4);
  want << step(f.params.forward), step(f.params.backward);
  expect_near(enc.final_state.value(), want.transpose(), 1e-12);
  expect_near(enc.hidden.value(), want.transpose(), 1e-12);
  EXPECT_EQ(enc.length, 1u);
}

TEST(Encode, MatchesStraightLineOracle) {
  Fixture f(8);
  const std::vector<std::string> words{"the", "red", "dog", "left", "of", "the", "giraffe"};
  const Expression expr = to_expression(words, f.vocab);
  ad::Tape tape(&f.store);
  const auto enc = encode_expression(tape, expr, f.params);
  const auto dec = decompose(enc, f.params);
  const Reference r = reference(f, expr.tokens);
  expect_near(enc.embeddings.value(), r.E, 1e-12);
  expect_near(enc.hidden.value(), r.H, 1e-12);
  expect_near(enc.pooled.value(), r.pooled.transpose(), 1e-12);
  expect_near(enc.final_state.value(), r.final_state.transpose(), 1e-12);
  for (int m = 0; m < 3; ++m) {
    expect_near(dec.token_attention[m].value(), r.attn[m].transpose(), 1e-12);
    expect_near(dec.features[m].value(), r.feats[m].transpose(), 1e-12);
  }
  expect_near(dec.weights.value(), r.weights.transpose(), 1e-12);
}

// The forward half at position t sees only tokens 0..t.
TEST(Encode, ForwardStatesAreCausal) {
  Fixture f(6);
  const auto full = to_expression({"the", "red", "dog", "left", "of"}, f.vocab);
  const auto prefix = to_expression({"the", "red", "dog"}, f.vocab);
  ad::Tape t1(&f.store), t2(&f.store);
  const Tensor a = encode_expression(t1, full, f.params).hidden.value();
  const Tensor b = encode_expression(t2, prefix, f.params).hidden.value();
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(a.at(t, k), b.at(t, k));
  }
}

TEST(Decompose, DistributionsAndConvexHull) {
  Fixture f(8, 11);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> tok(0, f.vocab.size() - 1);
  std::uniform_int_distribution<std::size_t> len(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    Expression e;
    const std::size_t T = len(rng);
    for (std::size_t t = 0; t < T; ++t) e.tokens.push_back(tok(rng));
    ad::Tape tape(&f.store);
    const auto enc = encode_expression(tape, e, f.params);
    const auto dec = decompose(enc, f.params);
    const Tensor& E = enc.embeddings.value();
    double wsum = 0.0;
    for (double w : dec.weights.value().data()) {
      EXPECT_GE(w, 0.0);
      wsum += w;
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
    for (int m = 0; m < 3; ++m) {
      const Tensor& a = dec.token_attention[m].value();
      ASSERT_EQ(a.size(), T);
      double s = 0.0;
      for (double x : a.data()) s += x;
      EXPECT_NEAR(s, 1.0, 1e-12);
      // Each coordinate of s_m lies between the min and max over tokens.
      const Tensor& feat = dec.features[m].value();
      for (std::size_t c = 0; c < E.cols(); ++c) {
        double lo = E.at(0, c), hi = lo;
        for (std::size_t t = 1; t < T; ++t) lo = std::min(lo, E.at(t, c)), hi = std::max(hi, E.at(t, c));
        EXPECT_GE(feat[c], lo - 1e-12);
        EXPECT_LE(feat[c], hi + 1e-12);
      }
    }
  }
}

TEST(Encode, OutOfVocabularyIndexIsRejected) {
  Fixture f(4);
  Expression e;
  e.tokens = {f.vocab.size()};
  ad::Tape tape(&f.store);
  EXPECT_THROW(encode_expression(tape, e, f.params), Error);
}

// Gradients of a scalar read-out of every output against central differences.
TEST(Encode, GradientsMatchFiniteDifferences) {
  Fixture f(6, 21);
  const auto expr = to_expression({"the", "tallest", "giraffe", "left", "of", "dog"}, f.vocab);
  auto loss_on_tape = [&](ad::Tape& tape) {
    const auto enc = encode_expression(tape, expr, f.params);
    const auto dec = decompose(enc, f.params);
    ad::Var total = ad::dot(enc.final_state, enc.final_state);
    for (int m = 0; m < 3; ++m) {
      total = ad::add(total, ad::dot(dec.features[m], dec.features[m]));
      total = ad::add(total, ad::scale(ad::pick(dec.weights, m), m + 1.0));
    }
    return total;
  };
  ad::Tape tape(&f.store);
  Gradients grads(f.store);
  tape.backward(loss_on_tape(tape), grads);
  for (std::size_t i = 0; i < f.store.size(); ++i) {
    const ParamId id = f.store.at(i);
    const Tensor keep = f.store.value(id);
    const Tensor numeric = testing::central_difference(
        [&](const Tensor& x) {
          f.store.value(id) = x;
          ad::Tape t(&f.store);
          const double v = loss_on_tape(t).value().item();
          f.store.value(id) = keep;
          return v;
        },
        keep);
    // Rows of the embedding table for absent tokens have zero gradient both ways.
    EXPECT_LT(testing::max_relative_error(grads.get(id), numeric), 1e-5) << f.store.name(id);
  }
}

}  // namespace
}  // namespace lgran
