#pragma once

#include "lgran/language.hpp"
#include "lgran/scene_graph.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace lgran {

struct AttributeSpec {
  std::string name;
  std::vector<std::string> values;
  friend bool operator==(const AttributeSpec&, const AttributeSpec&) = default;
};

/// Everything that shapes a generated scene. Region boxes are sampled with
/// sides in [min_side, max_side] as fractions of the image size.
struct SceneSpec {
  double width = 640;
  double height = 480;
  std::vector<std::string> categories{"car", "cat", "chair", "dog", "giraffe", "horse", "person", "umbrella"};
  std::vector<AttributeSpec> attributes{
      {"color", {"black", "blue", "green", "red", "white", "yellow"}},
      {"pattern", {"plain", "spotted", "striped"}},
  };
  std::size_t min_regions = 3;
  std::size_t max_regions = 6;
  double min_side = 0.08;
  double max_side = 0.22;
  double max_iou = 0.3;
  double duplicate_rate = 0.25;  // chance a new region copies an earlier one's category and attributes
  double noise = 0.1;
  std::size_t appearance_dim = 64;
  std::uint64_t world_seed = 2019;  // fixes the category and attribute embeddings
  std::size_t placement_retries = 200;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

void validate(const SceneSpec& spec);

/// Fixed embeddings: the first half of an appearance vector encodes the
/// category, the second half the sum of the attribute-value embeddings.
class AppearanceModel {
 public:
  explicit AppearanceModel(const SceneSpec& spec);
  std::vector<double> sample(const std::string& category, const std::map<std::string, std::string>& attrs,
                             std::mt19937_64& rng) const;

 private:
  std::size_t dim_;
  double noise_;
  std::map<std::string, std::vector<double>> category_;
  std::map<std::string, std::vector<double>> attribute_;  // keyed "name=value"
};

/// Samples a scene; GenerationError after exhausting the placement budget.
Scene generate_scene(const SceneSpec& spec, std::mt19937_64& rng);

double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

enum class IntraRelation { kNone, kLeftmost, kRightmost, kLargest, kSecondFromLeft, kAbovePeer, kBelowPeer };
enum class InterRelation { kNone, kLeftOf, kRightOf, kAbove, kBelow, kNearestTo };

std::string_view relation_name(IntraRelation r) noexcept;
std::string_view relation_name(InterRelation r) noexcept;
IntraRelation parse_intra_relation(std::string_view name);
InterRelation parse_inter_relation(std::string_view name);

struct SubjectPredicate {
  std::string category;
  std::map<std::string, std::string> attrs;
  friend bool operator==(const SubjectPredicate&, const SubjectPredicate&) = default;
};

struct ExpressionAST {
  SubjectPredicate subject;
  IntraRelation intra = IntraRelation::kNone;
  InterRelation inter = InterRelation::kNone;
  std::string anchor;  // category, set iff inter != kNone

  bool relational() const noexcept { return intra != IntraRelation::kNone || inter != InterRelation::kNone; }
  ExpressionAST subject_only() const { return {subject, IntraRelation::kNone, InterRelation::kNone, {}}; }
  friend bool operator==(const ExpressionAST&, const ExpressionAST&) = default;
};

/// Three-valued predicate outcome. Borderline means "within the margin":
/// the resolver keeps such regions as matches so that a certified sample is
/// never one that a small perturbation could flip.
enum class Truth { kFalse, kBorderline, kTrue };

/// Unambiguity margins: 0.05 W, 0.05 H, 0.05 max(W, H) and a 1.2 area ratio.
struct Margins {
  double x, y, dist, area_ratio;
};
Margins margins_for(const Scene& scene) noexcept;

/// Centre of a clearly left of centre of b.
Truth clearly_left(const BoundingBox& a, const BoundingBox& b, const Margins& m) noexcept;
/// Centre of a clearly above centre of b (image y grows downward).
Truth clearly_above(const BoundingBox& a, const BoundingBox& b, const Margins& m) noexcept;
/// Vertical extents overlap by at least the y margin.
Truth same_row(const BoundingBox& a, const BoundingBox& b, const Margins& m) noexcept;
/// Horizontal extents overlap by at least the x margin.
Truth same_column(const BoundingBox& a, const BoundingBox& b, const Margins& m) noexcept;

/// Per-region truth of the whole expression: subject filter, then the
/// intra-class relation among all regions of the subject's category, then
/// the inter-class relation against anchor regions.
std::vector<Truth> evaluate(const Scene& scene, const ExpressionAST& ast);

/// Ids of all regions not definitely excluded, in scene order.
std::vector<int> resolve_oracle(const Scene& scene, const ExpressionAST& ast);

/// Fixed wording: subject, then "that is" + intra clause, then the inter
/// clause, joined by "and" when both are present.
std::vector<std::string> render(const ExpressionAST& ast);

/// Every word the templates can emit for this spec.
Vocabulary world_vocabulary(const SceneSpec& spec);

enum class SampleTag { kAttribute, kRelational };
std::string_view tag_name(SampleTag t) noexcept;
SampleTag parse_tag(std::string_view name);

struct LabeledSample {
  Scene scene;
  std::vector<std::string> words;
  ExpressionAST ast;
  int referent_id = 0;
  SampleTag tag = SampleTag::kAttribute;
};

struct ExpressionPolicy {
  double relational_fraction = 0.6;
  double intra_share = 0.5;  // of relational samples
  // Relative weights within each family; zero disables a relation.
  std::map<IntraRelation, double> intra_weights{
      {IntraRelation::kLeftmost, 0},  {IntraRelation::kRightmost, 0},       {IntraRelation::kLargest, 0},
      {IntraRelation::kSecondFromLeft, 0}, {IntraRelation::kAbovePeer, 1}, {IntraRelation::kBelowPeer, 1},
  };
  std::map<InterRelation, double> inter_weights{
      {InterRelation::kLeftOf, 1}, {InterRelation::kRightOf, 1},  {InterRelation::kAbove, 1},
      {InterRelation::kBelow, 1},  {InterRelation::kNearestTo, 1},
  };
  std::size_t retries = 100;

  friend bool operator==(const ExpressionPolicy&, const ExpressionPolicy&) = default;
};

void validate(const ExpressionPolicy& policy);

/// The cheapest subject (category, then one attribute, then all) that picks
/// out exactly `region` among the scene's regions; none if it has an exact twin.
std::optional<SubjectPredicate> minimal_subject(const Scene& scene, std::size_t region, std::mt19937_64& rng);

/// Finds a certified expression for an existing scene: an attribute-only one
/// if `relational` is false, otherwise any enumerated relational AST whose
/// subject alone is ambiguous. Empty when the scene admits none.
std::optional<LabeledSample> generate_expression(const Scene& scene, bool relational, const ExpressionPolicy& policy,
                                                 std::mt19937_64& rng);

/// Builds a scene around a relational sample: two or three appearance-identical
/// copies of the subject, a partner placed to satisfy the relation for one of
/// them, and unrelated fillers. GenerationError when retries run out.
LabeledSample generate_relational(const SceneSpec& spec, const ExpressionPolicy& policy, std::mt19937_64& rng);

/// One sample drawn according to the policy.
LabeledSample generate_sample(const SceneSpec& spec, const ExpressionPolicy& policy, std::mt19937_64& rng);

/// `count` samples; sample i uses an independent stream derived from
/// (seed, i), so the result is a pure function of its arguments.
std::vector<LabeledSample> generate_dataset(const SceneSpec& spec, const ExpressionPolicy& policy, std::size_t count,
                                            std::uint64_t seed);

/// Stream seed for item `index` under `seed`.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) noexcept;

}  // namespace lgran
