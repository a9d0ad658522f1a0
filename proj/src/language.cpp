#include "lgran/language.hpp"

#include "lgran/errors.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace lgran {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  std::set<std::string> sorted;
  for (const auto& t : tokens) {
    if (t != kPadToken && t != kUnkToken && !t.empty()) sorted.insert(t);
  }
  tokens_.emplace_back(kPadToken);
  tokens_.emplace_back(kUnkToken);
  tokens_.insert(tokens_.end(), sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

std::size_t Vocabulary::index(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.size() < 2 || lines[0] != kPadToken || lines[1] != kUnkToken) {
    throw SchemaError("vocabulary must start with <pad> and <unk>");
  }
  Vocabulary v(lines);
  if (v.tokens_ != lines) throw SchemaError("vocabulary file is not a sorted unique token list");
  return v;
}

Expression to_expression(const std::vector<std::string>& words, const Vocabulary& vocab) {
  if (words.empty()) throw Error(ErrorKind::kGeneric, "empty expression");
  Expression e;
  for (const auto& w : words) {
    e.tokens.push_back(vocab.index(w));
    if (!e.text.empty()) e.text += ' ';
    e.text += w;
  }
  return e;
}

Expression tokenize(std::string_view text, const Vocabulary& vocab) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::istringstream in(lower);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return to_expression(words, vocab);
}

namespace {

LstmParams create_lstm(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                       std::mt19937_64& rng) {
  LstmParams p;
  p.wx = store.add(prefix + ".wx", xavier_uniform(4 * hidden, in, rng));
  p.wh = store.add(prefix + ".wh", xavier_uniform(4 * hidden, hidden, rng));
  Tensor b(Tensor::Shape{4 * hidden}, 0.0);
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;
  p.b = store.add(prefix + ".b", std::move(b));
  return p;
}

// Runs one direction over precomputed input projections [T, 4h]; returns the
// hidden state per position in sequence order.
std::vector<ad::Var> run_lstm(ad::Tape& tape, ad::Var gates_in, const LstmParams& p, std::size_t hidden,
                              bool reverse) {
  const std::size_t steps = gates_in.value().rows();
  std::vector<ad::Var> out(steps);
  ad::Var wh = tape.param(p.wh);
  ad::Var h, c;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    ad::Var g = ad::row(gates_in, t);
    if (h.valid()) g = ad::add(g, ad::matvec(wh, h));
    ad::Var i = ad::sigmoid(ad::slice(g, 0, hidden));
    ad::Var f = ad::sigmoid(ad::slice(g, hidden, hidden));
    ad::Var z = ad::tanh(ad::slice(g, 2 * hidden, hidden));
    ad::Var o = ad::sigmoid(ad::slice(g, 3 * hidden, hidden));
    c = c.valid() ? ad::add(ad::mul(f, c), ad::mul(i, z)) : ad::mul(i, z);
    h = ad::mul(o, ad::tanh(c));
    out[t] = h;
  }
  return out;
}

}  // namespace

LanguageParams LanguageParams::create(ParamStore& store, std::size_t vocab_size, const ModelDims& dims,
                                      std::mt19937_64& rng) {
  LanguageParams p;
  const std::size_t e = dims.embed;
  const std::size_t h = dims.lstm_hidden();
  // Fan-in of a one-hot input is the vocabulary size.
  p.embed_w = store.add("lang.embed.w", xavier_uniform(vocab_size, e, rng));
  p.embed_b = store.add("lang.embed.b", Tensor(Tensor::Shape{e}, 0.0));
  p.forward = create_lstm(store, "lang.lstm_fwd", e, h, rng);
  p.backward = create_lstm(store, "lang.lstm_bwd", e, h, rng);
  const char* names[kComponents] = {"lang.attn.sub", "lang.attn.intra", "lang.attn.inter"};
  for (std::size_t m = 0; m < kComponents; ++m) {
    p.token_attention[m] = store.add(names[m], xavier_uniform_vector(2 * h, 2 * h, 1, rng));
  }
  p.component_weights = store.add("lang.weights", xavier_uniform(kComponents, e, rng));
  return p;
}

LanguageEncoding encode_expression(ad::Tape& tape, const Expression& expr, const LanguageParams& params) {
  if (expr.tokens.empty()) throw Error(ErrorKind::kGeneric, "empty expression");
  const Tensor& table = tape.params()->value(params.embed_w);
  for (std::size_t tok : expr.tokens) {
    if (tok >= table.rows()) throw IncompatibleError("token index outside the vocabulary");
  }
  const std::size_t hidden = tape.params()->value(params.forward.wh).cols();

  LanguageEncoding enc;
  enc.length = expr.tokens.size();
  enc.embeddings = ad::relu(ad::add_bias(ad::gather_rows(tape.param(params.embed_w), expr.tokens),
                                         tape.param(params.embed_b)));
  enc.pooled = ad::sum_rows(enc.embeddings);

  auto project = [&](const LstmParams& p) {
    return ad::linear(enc.embeddings, tape.param(p.wx), tape.param(p.b));
  };
  const auto fwd = run_lstm(tape, project(params.forward), params.forward, hidden, false);
  const auto bwd = run_lstm(tape, project(params.backward), params.backward, hidden, true);
  std::vector<ad::Var> rows;
  rows.reserve(enc.length);
  for (std::size_t t = 0; t < enc.length; ++t) rows.push_back(ad::concat(std::vector<ad::Var>{fwd[t], bwd[t]}));
  enc.hidden = ad::stack_rows(rows);
  enc.final_state = ad::concat(std::vector<ad::Var>{fwd.back(), bwd.front()});
  return enc;
}

LanguageDecomposition decompose(const LanguageEncoding& enc, const LanguageParams& params) {
  ad::Tape& tape = *enc.hidden.tape();
  LanguageDecomposition d;
  for (std::size_t m = 0; m < kComponents; ++m) {
    d.token_attention[m] = ad::softmax(ad::rows_dot(enc.hidden, tape.param(params.token_attention[m])));
    d.features[m] = ad::weighted_sum_rows(d.token_attention[m], enc.embeddings);
  }
  d.weights = ad::softmax(ad::matvec(tape.param(params.component_weights), enc.pooled));
  return d;
}

}  // namespace lgran
