#include "lgran/matching.hpp"

#include "lgran/errors.hpp"

#include <string>

namespace lgran {

MatchingParams MatchingParams::create(ParamStore& store, const ModelDims& dims, std::mt19937_64& rng) {
  static constexpr const char* kNames[kComponents] = {"match.sub", "match.intra", "match.inter"};
  MatchingParams p;
  for (std::size_t m = 0; m < kComponents; ++m) {
    const std::size_t width = m == kSubject ? 2 * dims.encoder : dims.encoder;
    p.w_lang[m] = store.add(std::string(kNames[m]) + ".w_lang", xavier_uniform(dims.match, dims.embed, rng));
    p.w_obj[m] = store.add(std::string(kNames[m]) + ".w_obj", xavier_uniform(dims.match, width, rng));
  }
  return p;
}

ad::Var component_scores(ad::Var lang, ad::Var objects, const MatchingParams& params, Component m) {
  ad::Tape& t = *objects.tape();
  ad::Var l = ad::tanh(ad::matvec(t.param(params.w_lang[m]), lang));
  ad::Var g = ad::tanh(ad::linear(objects, t.param(params.w_obj[m])));
  return ad::rows_dot(g, l);
}

ad::Var combine_scores(ad::Var weights, ad::Var p_obj, ad::Var p_intra, ad::Var p_inter) {
  ad::Var p = ad::mul_scalar(p_obj, ad::pick(weights, kSubject));
  p = ad::add(p, ad::mul_scalar(p_intra, ad::pick(weights, kIntra)));
  return ad::add(p, ad::mul_scalar(p_inter, ad::pick(weights, kInter)));
}

ad::Var cross_entropy(ad::Var scores, std::size_t label) {
  if (label >= scores.value().size()) {
    throw Error(ErrorKind::kGeneric, "label " + std::to_string(label) + " out of range for " +
                                         std::to_string(scores.value().size()) + " objects");
  }
  return ad::scale(ad::pick(ad::log_softmax(scores), label), -1.0);
}

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorKind::kGeneric, "argmax of an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace lgran
