#pragma once

#include "lgran/adam.hpp"
#include "lgran/config.hpp"
#include "lgran/io.hpp"
#include "lgran/language.hpp"
#include "lgran/model.hpp"
#include "lgran/scene_graph.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lgran {

// ---- prepared data ----

struct PreparedExpression {
  Expression expr;
  std::vector<std::string> words;
  std::size_t label = 0;  // node index of the referent
  SampleTag tag = SampleTag::kAttribute;
  // Another region shares the referent's category and attributes.
  bool duplicates = false;
};

struct PreparedScene {
  Scene scene;
  ObjectGraph graph;
  std::vector<PreparedExpression> expressions;
};

struct PreparedDataset {
  std::vector<PreparedScene> scenes;
  std::size_t expression_count() const noexcept;
};

enum class VocabularyPolicy {
  kMapUnknown,  // unknown words become <unk>
  kStrict,      // unknown words are an IncompatibleError
};

/// Builds graphs and token indices. Region appearance comes from `features`
/// when given, otherwise from the vectors stored on the regions.
PreparedDataset prepare(const std::vector<DatasetScene>& data, const Vocabulary& vocab, std::size_t k,
                        VocabularyPolicy policy = VocabularyPolicy::kMapUnknown,
                        const FeatureProvider* features = nullptr);

/// Holds out roughly `fraction` of scenes, chosen by a hash of the scene index
/// so the split does not depend on the order anything else happens in.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};
Split validation_split(std::size_t scene_count, double fraction = 0.1);

PreparedDataset subset(const PreparedDataset& data, const std::vector<std::size_t>& scene_indices);

// ---- evaluation ----

struct Accuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double value() const noexcept { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
  void add(bool hit) noexcept {
    correct += hit ? 1 : 0;
    total += 1;
  }
};

struct SampleRecord {
  std::size_t scene = 0;
  std::size_t expression = 0;
  int predicted_id = 0;
  int referent_id = 0;
  double iou = 0.0;
  bool correct = false;
  SampleTag tag = SampleTag::kAttribute;
  bool duplicates = false;
};

struct EvalReport {
  Accuracy overall;
  Accuracy relational;
  Accuracy attribute;
  Accuracy relational_duplicates;
  std::vector<SampleRecord> records;
};

/// A prediction is correct when its box overlaps the referent's with IoU > 0.5.
inline constexpr double kCorrectIou = 0.5;

using Predictor = std::function<std::size_t(const PreparedScene&, const PreparedExpression&)>;
EvalReport evaluate(const PreparedDataset& data, const Predictor& predictor);
EvalReport evaluate(const Model& model, const PreparedDataset& data);

// ---- training ----

struct MetricsRecord {
  std::size_t iteration = 0;  // 1-based count of completed updates
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // wall clock since training started
  std::optional<double> train_accuracy;
  std::optional<double> validation_accuracy;
};

struct MetricsLog {
  std::string config_hash;
  Json config;
  std::vector<MetricsRecord> records;

  std::vector<double> losses() const;
  static Json to_json(const MetricsRecord& r);
  /// A header line with the config, then one line per record.
  void write_jsonl(std::ostream& out) const;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_record;
  std::function<void(std::size_t iteration, const Model&, const AdamState&, const std::string& rng_state)>
      on_checkpoint;
  // Where a diagnostic dump goes if a non-finite value shows up. Empty: the
  // current directory.
  std::filesystem::path diagnostics_dir;
};

struct TrainResult {
  Model model;
  AdamState adam;
  MetricsLog log;
  std::size_t iterations_run = 0;
  bool stopped_early = false;
  std::string rng_state;
};

/// Adam on the mean cross-entropy over every expression of `batch_images`
/// scenes per iteration. Scenes are visited in a seeded shuffled order,
/// reshuffled each pass.
TrainResult train(const PreparedDataset& data, const TrainConfig& config, std::size_t vocab_size,
                  const PreparedDataset* validation = nullptr, const TrainHooks& hooks = {});

/// Mean loss over one batch, as a tape scalar. Exposed for gradient checks.
ad::Var batch_loss(ad::Tape& tape, const Model& model, const PreparedDataset& data,
                   const std::vector<std::size_t>& scenes, Mode mode, std::mt19937_64& rng);

// ---- ablation ----

struct AblationRow {
  Variant variant = Variant::kLgrans;
  EvalReport test;
  EvalReport train;
  double final_loss = 0.0;
  double seconds = 0.0;
};

std::vector<AblationRow> ablation_run(const PreparedDataset& train_data, const PreparedDataset& test_data,
                                      const TrainConfig& base, std::size_t vocab_size,
                                      const std::vector<Variant>& variants = {Variant::kNodeRep, Variant::kGraphRep,
                                                                              Variant::kNodeAttn, Variant::kEdgeAttn,
                                                                              Variant::kLgrans},
                                      const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

// ---- gradient checks ----

struct GradCheckOptions {
  double h = 1e-5;
  // Coordinates per parameter tensor; 0 checks all of them.
  std::size_t coords_per_group = 0;
  std::uint64_t seed = 0;
  // Denominator floor of the relative error, so gradients that are zero on
  // both sides do not divide by zero.
  double floor = 1e-6;
};

struct GroupError {
  std::string name;
  std::size_t checked = 0;
  std::size_t total = 0;
  double max_relative = 0.0;
  double max_absolute = 0.0;
};

struct GradCheckReport {
  std::vector<GroupError> groups;
  double max_relative = 0.0;
  std::string worst_group;
};

/// Central differences against the tape for every parameter in `store`.
/// `loss` must build a scalar on the tape it is handed and be deterministic.
GradCheckReport grad_check(ParamStore& store, const std::function<ad::Var(ad::Tape&)>& loss,
                           const GradCheckOptions& options = {});

/// Checks the model loss on one expression. Dropout makes the loss random, so
/// train mode with a nonzero rate is refused.
GradCheckReport grad_check(Model& model, const ObjectGraph& graph, const Expression& expr, std::size_t label,
                           Mode mode = Mode::kEval, const GradCheckOptions& options = {});

std::string format_report(const GradCheckReport& report);

}  // namespace lgran
