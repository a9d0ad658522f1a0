#pragma once

#include "lgran/autodiff.hpp"
#include "lgran/config.hpp"
#include "lgran/language.hpp"
#include "lgran/params.hpp"

#include <array>
#include <random>
#include <span>

namespace lgran {

/// One projection pair per component: language side [match, embed], object
/// side [match, object width].
struct MatchingParams {
  std::array<ParamId, kComponents> w_lang;
  std::array<ParamId, kComponents> w_obj;

  static MatchingParams create(ParamStore& store, const ModelDims& dims, std::mt19937_64& rng);
};

/// tanh(W_s s) . tanh(W_g x_i) for every row x_i.
ad::Var component_scores(ad::Var lang, ad::Var objects, const MatchingParams& params, Component m);

/// Weighted sum of per-node component scores; `weights` is a length-3
/// distribution.
ad::Var combine_scores(ad::Var weights, ad::Var p_obj, ad::Var p_intra, ad::Var p_inter);

/// -log softmax(p)[label]. Throws when the label is out of range.
ad::Var cross_entropy(ad::Var scores, std::size_t label);

/// Lowest index among the maxima.
std::size_t argmax(std::span<const double> scores);

}  // namespace lgran
