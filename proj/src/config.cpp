#include "lgran/config.hpp"

#include "lgran/errors.hpp"

#include <array>
#include <cmath>
#include <utility>

namespace lgran {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 5> kVariants{{
    {Variant::kNodeRep, "NodeRep"},
    {Variant::kGraphRep, "GraphRep"},
    {Variant::kNodeAttn, "NodeAttn"},
    {Variant::kEdgeAttn, "EdgeAttn"},
    {Variant::kLgrans, "LGRANs"},
}};

constexpr std::array<std::pair<NormMode, std::string_view>, 3> kNorms{{
    {NormMode::kNone, "none"},
    {NormMode::kBatch, "batch"},
    {NormMode::kLayer, "layer"},
}};

}  // namespace

std::string_view variant_name(Variant v) noexcept {
  for (auto [k, name] : kVariants) {
    if (k == v) return name;
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (auto [k, n] : kVariants) {
    if (n == name) return k;
  }
  throw Error(ErrorKind::kUsage, "unknown variant: " + std::string(name));
}

std::string_view norm_mode_name(NormMode m) noexcept {
  for (auto [k, name] : kNorms) {
    if (k == m) return name;
  }
  return "?";
}

NormMode parse_norm_mode(std::string_view name) {
  for (auto [k, n] : kNorms) {
    if (n == name) return k;
  }
  throw Error(ErrorKind::kUsage, "unknown normalization mode: " + std::string(name));
}

void validate(const ModelConfig& c) {
  const auto& d = c.dims;
  if (d.embed < 2 || d.embed % 2 != 0) throw Error(ErrorKind::kUsage, "embed dim must be even and >= 2");
  if (d.encoder == 0 || d.attention == 0 || d.match == 0) throw Error(ErrorKind::kUsage, "model dims must be positive");
  if (c.appearance_dim == 0) throw Error(ErrorKind::kUsage, "appearance dim must be positive");
  if (c.k == 0) throw Error(ErrorKind::kUsage, "k must be >= 1");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw Error(ErrorKind::kUsage, "dropout must be in [0, 1)");
}

void validate(const TrainConfig& c) {
  validate(c.model);
  if (c.batch_images == 0) throw Error(ErrorKind::kUsage, "batch size must be positive");
  if (!(c.base_lr > 0)) throw Error(ErrorKind::kUsage, "learning rate must be positive");
  if (c.decay_every == 0) throw Error(ErrorKind::kUsage, "decay interval must be positive");
}

double learning_rate(const TrainConfig& c, std::size_t iteration) {
  // Dividing by an exact power of ten keeps 0.001 -> 0.0001 -> 1e-05 exact.
  return c.base_lr / std::pow(10.0, static_cast<double>(iteration / c.decay_every));
}

}  // namespace lgran
