#pragma once

#include "lgran/autodiff.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace lgran {

/// Widths of every learned map. The Bi-LSTM runs embed/2 units per direction
/// so the concatenated hidden state has the embedding width.
struct ModelDims {
  std::size_t embed = 512;
  std::size_t encoder = 512;  // output of each node/edge encoder MLP
  std::size_t attention = 512;
  std::size_t match = 512;

  std::size_t lstm_hidden() const noexcept { return embed / 2; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Which parts of the network are active. LGRANs is the full model.
enum class Variant { kNodeRep, kGraphRep, kNodeAttn, kEdgeAttn, kLgrans };

std::string_view variant_name(Variant v) noexcept;
Variant parse_variant(std::string_view name);

std::string_view norm_mode_name(NormMode m) noexcept;
NormMode parse_norm_mode(std::string_view name);

struct ModelConfig {
  ModelDims dims;
  std::size_t appearance_dim = 64;
  std::size_t k = 5;
  NormMode norm = NormMode::kLayer;
  double dropout = 0.4;
  Variant variant = Variant::kLgrans;
  std::uint64_t init_seed = 1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& config);

/// Optimization schedule. The learning rate is base_lr divided by 10 once per
/// `decay_every` iterations.
struct TrainConfig {
  ModelConfig model;
  std::size_t batch_images = 30;
  double base_lr = 0.001;
  std::size_t decay_every = 6000;
  std::size_t iterations = 2000;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;        // 0: no periodic accuracy
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t patience = 0;          // evaluations without improvement; 0 disables early stopping

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void validate(const TrainConfig& config);

double learning_rate(const TrainConfig& config, std::size_t iteration);

}  // namespace lgran
