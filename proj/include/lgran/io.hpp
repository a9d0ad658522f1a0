#pragma once

#include "lgran/adam.hpp"
#include "lgran/config.hpp"
#include "lgran/language.hpp"
#include "lgran/model.hpp"
#include "lgran/scene_graph.hpp"
#include "lgran/synthworld.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lgran {

using Json = nlohmann::ordered_json;

inline constexpr int kDatasetFormat = 1;
inline constexpr int kCheckpointFormat = 1;
inline constexpr int kAttentionDumpFormat = 1;
inline constexpr int kConfigFormat = 1;

// ---- configuration ----

Json to_json(const ModelConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const SceneSpec& s);
Json to_json(const ExpressionPolicy& p);
Json to_json(const ExpressionAST& a);

/// Each reader starts from `base` and overrides only the keys present, so a
/// partial file layers over defaults. Unknown keys are schema errors.
ModelConfig model_config_from_json(const Json& j, ModelConfig base = {});
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});
SceneSpec scene_spec_from_json(const Json& j, SceneSpec base = {});
ExpressionPolicy policy_from_json(const Json& j, ExpressionPolicy base = {});
ExpressionAST ast_from_json(const Json& j);

/// 64-bit FNV-1a of the compact JSON text, as 16 hex digits.
std::string fnv1a_hex(std::string_view text);
std::string config_hash(const ModelConfig& c);
std::string config_hash(const TrainConfig& c);

Json read_json_file(const std::filesystem::path& path);

// ---- datasets: one scene per line ----

struct DatasetExpression {
  std::vector<std::string> tokens;
  int referent_id = 0;
  std::optional<ExpressionAST> ast;
  SampleTag tag = SampleTag::kAttribute;
  friend bool operator==(const DatasetExpression&, const DatasetExpression&) = default;
};

struct DatasetScene {
  Scene scene;
  std::vector<DatasetExpression> expressions;
  friend bool operator==(const DatasetScene&, const DatasetScene&) = default;
};

std::vector<DatasetScene> to_dataset(const std::vector<LabeledSample>& samples);

std::string dataset_line(const DatasetScene& scene);
/// SchemaError messages name `line_number`.
DatasetScene parse_dataset_line(std::string_view line, std::size_t line_number);

void write_dataset(std::ostream& out, const std::vector<DatasetScene>& scenes);
std::vector<DatasetScene> read_dataset(std::istream& in);
void write_dataset_file(const std::filesystem::path& path, const std::vector<DatasetScene>& scenes);
std::vector<DatasetScene> read_dataset_file(const std::filesystem::path& path);

/// Precomputed appearance vectors, one JSON object per line:
/// {"scene": index, "region": id, "feature": [...]}. Overrides the vectors
/// stored on the matching regions.
void apply_feature_file(std::vector<DatasetScene>& scenes, const std::filesystem::path& path);

// ---- checkpoints: JSON header line, then raw little-endian doubles ----

struct CheckpointExtras {
  std::size_t iteration = 0;
  std::optional<AdamState> adam;
  std::string rng_state;  // textual std::mt19937_64 state, may be empty
};

struct LoadedCheckpoint {
  Model model;
  Vocabulary vocab;
  CheckpointExtras extras;
};

void save_checkpoint(std::ostream& out, const Model& model, const Vocabulary& vocab,
                     const CheckpointExtras& extras = {});
LoadedCheckpoint load_checkpoint(std::istream& in);
void save_checkpoint_file(const std::filesystem::path& path, const Model& model, const Vocabulary& vocab,
                          const CheckpointExtras& extras = {});
LoadedCheckpoint load_checkpoint_file(const std::filesystem::path& path);

// ---- attention export ----

Json attention_dump(const Scene& scene, const ObjectGraph& graph, const std::vector<std::string>& tokens,
                    const Prediction& prediction, Variant variant, std::optional<int> referent_id);

/// Boxes shaded by node attention, attended edges as arrows (blue intra,
/// red inter) with stroke width following the attention value.
std::string attention_svg(const Scene& scene, const ObjectGraph& graph, const std::vector<std::string>& tokens,
                          const Prediction& prediction, std::optional<int> referent_id);

void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace lgran
