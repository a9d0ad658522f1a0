#pragma once

#include "lgran/autodiff.hpp"
#include "lgran/config.hpp"
#include "lgran/params.hpp"

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace lgran {

/// Token <-> index map. Index 0 is padding, index 1 the unknown token; the
/// remaining tokens follow in sorted order.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t index(std::string_view token) const;
  bool contains(std::string_view token) const { return index_.find(token) != index_.end(); }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// One token per line; the line number is the index.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct Expression {
  std::vector<std::size_t> tokens;
  std::string text;
};

/// Lowercase, whitespace split, unknown words map to Vocabulary::kUnk.
Expression tokenize(std::string_view text, const Vocabulary& vocab);
Expression to_expression(const std::vector<std::string>& words, const Vocabulary& vocab);

enum Component : std::size_t { kSubject = 0, kIntra = 1, kInter = 2 };
inline constexpr std::size_t kComponents = 3;

struct LstmParams {
  ParamId wx;  // [4h, embed], gate order input, forget, cell, output
  ParamId wh;  // [4h, h]
  ParamId b;   // [4h]
};

struct LanguageParams {
  ParamId embed_w;  // [vocab, embed]: row lookup == linear map of a one-hot
  ParamId embed_b;  // [embed]
  LstmParams forward;
  LstmParams backward;
  std::array<ParamId, kComponents> token_attention;  // each [embed]
  ParamId component_weights;                         // [3, embed]

  static LanguageParams create(ParamStore& store, std::size_t vocab_size, const ModelDims& dims,
                               std::mt19937_64& rng);
};

struct LanguageEncoding {
  ad::Var embeddings;   // [T, embed]
  ad::Var hidden;       // [T, embed]: forward half then backward half
  ad::Var pooled;       // [embed], sum over t of the embeddings
  ad::Var final_state;  // [embed]: last forward state, first backward state
  std::size_t length = 0;
};

struct LanguageDecomposition {
  std::array<ad::Var, kComponents> token_attention;  // each [T]
  std::array<ad::Var, kComponents> features;         // each [embed]
  ad::Var weights;                                   // [3]
};

/// Embeds the tokens and runs the Bi-LSTM from zero initial states. The
/// recurrence has no dropout, so the result does not depend on Mode.
LanguageEncoding encode_expression(ad::Tape& tape, const Expression& expr, const LanguageParams& params);
LanguageDecomposition decompose(const LanguageEncoding& enc, const LanguageParams& params);

}  // namespace lgran
