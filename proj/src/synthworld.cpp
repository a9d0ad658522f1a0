#include "lgran/synthworld.hpp"

#include "lgran/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <utility>

namespace lgran {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t pick_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

template <class T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
  return v[pick_index(rng, v.size())];
}

template <class K>
K weighted_pick(std::mt19937_64& rng, const std::map<K, double>& weights) {
  double total = 0.0;
  for (const auto& [k, w] : weights) total += w;
  double r = uniform(rng, 0.0, total);
  K last{};
  for (const auto& [k, w] : weights) {
    if (w <= 0) continue;
    last = k;
    if (r < w) return k;
    r -= w;
  }
  return last;
}

template <class K>
bool any_positive(const std::map<K, double>& weights) {
  return std::any_of(weights.begin(), weights.end(), [](const auto& kv) { return kv.second > 0; });
}

Truth truth_and(Truth a, Truth b) { return std::min(a, b); }
Truth truth_or(Truth a, Truth b) { return std::max(a, b); }

// T when `value` >= margin, F when <= -margin (or <= 0 if strict_zero).
Truth graded(double value, double margin, bool strict_zero) {
  if (value >= margin) return Truth::kTrue;
  if (strict_zero ? value <= 0.0 : value <= -margin) return Truth::kFalse;
  return Truth::kBorderline;
}

std::map<std::string, std::string> random_attrs(const SceneSpec& spec, std::mt19937_64& rng) {
  std::map<std::string, std::string> attrs;
  for (const auto& a : spec.attributes) attrs[a.name] = pick(rng, a.values);
  return attrs;
}

}  // namespace

void validate(const SceneSpec& s) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kUsage, "invalid scene spec: " + what); };
  if (!(s.width > 0) || !(s.height > 0)) fail("image size must be positive");
  if (s.categories.empty()) fail("no categories");
  if (s.min_regions < 1 || s.max_regions < s.min_regions) fail("region-count range");
  if (!(s.min_side > 0) || s.max_side < s.min_side || s.max_side > 1) fail("side range");
  if (s.max_iou < 0 || s.max_iou > 1) fail("max_iou");
  if (s.duplicate_rate < 0 || s.duplicate_rate > 1) fail("duplicate_rate");
  if (s.noise < 0) fail("noise");
  if (s.appearance_dim < 2) fail("appearance_dim");
  for (const auto& a : s.attributes) {
    if (a.name.empty() || a.values.empty()) fail("attribute " + a.name);
  }
}

AppearanceModel::AppearanceModel(const SceneSpec& spec) : dim_(spec.appearance_dim), noise_(spec.noise) {
  std::mt19937_64 rng(spec.world_seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t half = dim_ / 2;
  std::set<std::string> cats(spec.categories.begin(), spec.categories.end());
  for (const auto& c : cats) {
    auto& v = category_[c];
    for (std::size_t i = 0; i < half; ++i) v.push_back(n(rng));
  }
  for (const auto& a : spec.attributes) {
    for (const auto& value : a.values) {
      auto& v = attribute_[a.name + "=" + value];
      for (std::size_t i = half; i < dim_; ++i) v.push_back(n(rng));
    }
  }
}

std::vector<double> AppearanceModel::sample(const std::string& category,
                                            const std::map<std::string, std::string>& attrs,
                                            std::mt19937_64& rng) const {
  auto cat = category_.find(category);
  if (cat == category_.end()) throw Error(ErrorKind::kGeneric, "unknown category: " + category);
  std::vector<double> out = cat->second;
  out.resize(dim_, 0.0);
  for (const auto& [name, value] : attrs) {
    auto it = attribute_.find(name + "=" + value);
    if (it == attribute_.end()) throw Error(ErrorKind::kGeneric, "unknown attribute value: " + name + "=" + value);
    for (std::size_t i = 0; i < it->second.size(); ++i) out[dim_ / 2 + i] += it->second[i];
  }
  if (noise_ > 0) {
    std::normal_distribution<double> n(0.0, noise_);
    for (auto& v : out) v += n(rng);
  }
  return out;
}

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double iw = std::min(a.x_br(), b.x_br()) - std::max(a.x, b.x);
  const double ih = std::min(a.y_br(), b.y_br()) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace {

bool fits(const BoundingBox& b, const SceneSpec& spec) {
  return b.x >= 0 && b.y >= 0 && b.x_br() <= spec.width && b.y_br() <= spec.height;
}

bool clear_of(const BoundingBox& b, const std::vector<Region>& placed, double max_iou) {
  return std::all_of(placed.begin(), placed.end(), [&](const Region& r) { return iou(b, r.box) <= max_iou; });
}

std::pair<double, double> random_size(const SceneSpec& spec, std::mt19937_64& rng) {
  return {uniform(rng, spec.min_side, spec.max_side) * spec.width,
          uniform(rng, spec.min_side, spec.max_side) * spec.height};
}

// Random in-bounds position for a box of the given size that keeps the IoU
// limit against everything placed so far.
std::optional<BoundingBox> place(const SceneSpec& spec, double w, double h, const std::vector<Region>& placed,
                                 std::mt19937_64& rng) {
  for (std::size_t attempt = 0; attempt < spec.placement_retries; ++attempt) {
    const BoundingBox b{uniform(rng, 0, spec.width - w), uniform(rng, 0, spec.height - h), w, h};
    if (clear_of(b, placed, spec.max_iou)) return b;
  }
  return std::nullopt;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::mt19937_64& rng) {
  validate(spec);
  const AppearanceModel looks(spec);
  for (std::size_t attempt = 0; attempt < spec.placement_retries; ++attempt) {
    Scene scene{spec.width, spec.height, {}};
    const std::size_t n = std::uniform_int_distribution<std::size_t>(spec.min_regions, spec.max_regions)(rng);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      Region r;
      r.id = static_cast<int>(i);
      if (i > 0 && uniform(rng, 0, 1) < spec.duplicate_rate) {
        const Region& src = pick(rng, scene.regions);
        r.category = src.category;
        r.attrs = src.attrs;
      } else {
        r.category = pick(rng, spec.categories);
        r.attrs = random_attrs(spec, rng);
      }
      const auto [w, h] = random_size(spec, rng);
      const auto box = place(spec, w, h, scene.regions, rng);
      if (!box) {
        ok = false;
        break;
      }
      r.box = *box;
      r.appearance = looks.sample(r.category, r.attrs, rng);
      scene.regions.push_back(std::move(r));
    }
    if (ok) return scene;
  }
  throw GenerationError("could not place regions within the retry budget");
}

namespace {

constexpr std::array<std::pair<IntraRelation, std::string_view>, 7> kIntraNames{{
    {IntraRelation::kNone, "none"},
    {IntraRelation::kLeftmost, "leftmost"},
    {IntraRelation::kRightmost, "rightmost"},
    {IntraRelation::kLargest, "largest"},
    {IntraRelation::kSecondFromLeft, "second_from_left"},
    {IntraRelation::kAbovePeer, "above_peer"},
    {IntraRelation::kBelowPeer, "below_peer"},
}};

constexpr std::array<std::pair<InterRelation, std::string_view>, 6> kInterNames{{
    {InterRelation::kNone, "none"},
    {InterRelation::kLeftOf, "left_of"},
    {InterRelation::kRightOf, "right_of"},
    {InterRelation::kAbove, "above"},
    {InterRelation::kBelow, "below"},
    {InterRelation::kNearestTo, "nearest_to"},
}};

}  // namespace

std::string_view relation_name(IntraRelation r) noexcept {
  for (auto [k, n] : kIntraNames) {
    if (k == r) return n;
  }
  return "?";
}

std::string_view relation_name(InterRelation r) noexcept {
  for (auto [k, n] : kInterNames) {
    if (k == r) return n;
  }
  return "?";
}

IntraRelation parse_intra_relation(std::string_view name) {
  for (auto [k, n] : kIntraNames) {
    if (n == name) return k;
  }
  throw SchemaError("unknown intra-class relation: " + std::string(name));
}

InterRelation parse_inter_relation(std::string_view name) {
  for (auto [k, n] : kInterNames) {
    if (n == name) return k;
  }
  throw SchemaError("unknown inter-class relation: " + std::string(name));
}

Margins margins_for(const Scene& s) noexcept {
  return {0.05 * s.width, 0.05 * s.height, 0.05 * std::max(s.width, s.height), 1.2};
}

Truth clearly_left(const BoundingBox& a, const BoundingBox& b, const Margins& m) noexcept {
  return graded(b.x_c() - a.x_c(), m.x, false);
}

Truth clearly_above(const BoundingBox& a, const BoundingBox& b, const Margins& m) noexcept {
  return graded(b.y_c() - a.y_c(), m.y, false);
}

Truth same_row(const BoundingBox& a, const BoundingBox& b, const Margins& m) noexcept {
  return graded(std::min(a.y_br(), b.y_br()) - std::max(a.y, b.y), m.y, true);
}

Truth same_column(const BoundingBox& a, const BoundingBox& b, const Margins& m) noexcept {
  return graded(std::min(a.x_br(), b.x_br()) - std::max(a.x, b.x), m.x, true);
}

namespace {

bool matches_subject(const Region& r, const SubjectPredicate& s) {
  if (r.category != s.category) return false;
  for (const auto& [name, value] : s.attrs) {
    auto it = r.attrs.find(name);
    if (it == r.attrs.end() || it->second != value) return false;
  }
  return true;
}

Truth larger(const BoundingBox& a, const BoundingBox& b, const Margins& m) {
  if (a.area() >= m.area_ratio * b.area()) return Truth::kTrue;
  if (b.area() >= m.area_ratio * a.area()) return Truth::kFalse;
  return Truth::kBorderline;
}

Truth intra_truth(const Scene& s, std::size_t i, IntraRelation rel, const Margins& m) {
  const Region& me = s.regions[i];
  std::vector<const BoundingBox*> peers;
  for (std::size_t j = 0; j < s.regions.size(); ++j) {
    if (j != i && s.regions[j].category == me.category) peers.push_back(&s.regions[j].box);
  }
  const BoundingBox& b = me.box;
  Truth all = Truth::kTrue;
  Truth any = Truth::kFalse;
  std::size_t left = 0, unsure = 0;
  for (const BoundingBox* p : peers) {
    switch (rel) {
      case IntraRelation::kLeftmost:
        all = truth_and(all, clearly_left(b, *p, m));
        break;
      case IntraRelation::kRightmost:
        all = truth_and(all, clearly_left(*p, b, m));
        break;
      case IntraRelation::kLargest:
        all = truth_and(all, larger(b, *p, m));
        break;
      case IntraRelation::kSecondFromLeft: {
        const Truth t = clearly_left(*p, b, m);
        left += t == Truth::kTrue;
        unsure += t == Truth::kBorderline;
        break;
      }
      case IntraRelation::kAbovePeer:
        any = truth_or(any, truth_and(same_column(b, *p, m), clearly_above(b, *p, m)));
        break;
      case IntraRelation::kBelowPeer:
        any = truth_or(any, truth_and(same_column(b, *p, m), clearly_above(*p, b, m)));
        break;
      case IntraRelation::kNone:
        break;
    }
  }
  switch (rel) {
    case IntraRelation::kSecondFromLeft:
      if (left == 1 && unsure == 0) return Truth::kTrue;
      if (left >= 2 || left + unsure == 0) return Truth::kFalse;
      return Truth::kBorderline;
    case IntraRelation::kAbovePeer:
    case IntraRelation::kBelowPeer:
      return any;
    case IntraRelation::kNone:
      return Truth::kTrue;
    default:
      return all;
  }
}

Truth directional(const BoundingBox& b, const BoundingBox& a, InterRelation rel, const Margins& m) {
  switch (rel) {
    case InterRelation::kLeftOf:
      return truth_and(same_row(b, a, m), clearly_left(b, a, m));
    case InterRelation::kRightOf:
      return truth_and(same_row(b, a, m), clearly_left(a, b, m));
    case InterRelation::kAbove:
      return truth_and(same_column(b, a, m), clearly_above(b, a, m));
    case InterRelation::kBelow:
      return truth_and(same_column(b, a, m), clearly_above(a, b, m));
    default:
      return Truth::kFalse;
  }
}

double centre_distance(const BoundingBox& a, const BoundingBox& b) {
  return std::hypot(a.x_c() - b.x_c(), a.y_c() - b.y_c());
}

}  // namespace

std::vector<Truth> evaluate(const Scene& scene, const ExpressionAST& ast) {
  const Margins m = margins_for(scene);
  const std::size_t n = scene.regions.size();
  std::vector<Truth> out(n, Truth::kFalse);
  for (std::size_t i = 0; i < n; ++i) {
    if (!matches_subject(scene.regions[i], ast.subject)) continue;
    out[i] = Truth::kTrue;
    if (ast.intra != IntraRelation::kNone) out[i] = intra_truth(scene, i, ast.intra, m);
  }
  if (ast.inter == InterRelation::kNone) return out;

  std::vector<std::size_t> anchors;
  for (std::size_t j = 0; j < n; ++j) {
    if (scene.regions[j].category == ast.anchor) anchors.push_back(j);
  }
  if (ast.inter != InterRelation::kNearestTo) {
    for (std::size_t i = 0; i < n; ++i) {
      if (out[i] == Truth::kFalse) continue;
      Truth any = Truth::kFalse;
      for (std::size_t a : anchors) {
        if (a != i) any = truth_or(any, directional(scene.regions[i].box, scene.regions[a].box, ast.inter, m));
      }
      out[i] = truth_and(out[i], any);
    }
    return out;
  }

  // Nearest is relative to the candidates that survived the earlier filters.
  std::vector<std::size_t> cand;
  std::vector<double> dist(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (out[i] == Truth::kFalse) continue;
    double d = INFINITY;
    for (std::size_t a : anchors) {
      if (a != i) d = std::min(d, centre_distance(scene.regions[i].box, scene.regions[a].box));
    }
    if (std::isinf(d)) {
      out[i] = Truth::kFalse;
    } else {
      cand.push_back(i);
      dist[i] = d;
    }
  }
  std::vector<Truth> nearest(n, Truth::kFalse);
  for (std::size_t i : cand) {
    Truth all = Truth::kTrue;
    for (std::size_t q : cand) {
      if (q != i) all = truth_and(all, graded(dist[q] - dist[i], m.dist, false));
    }
    nearest[i] = all;
  }
  for (std::size_t i : cand) out[i] = truth_and(out[i], nearest[i]);
  return out;
}

std::vector<int> resolve_oracle(const Scene& scene, const ExpressionAST& ast) {
  const auto truth = evaluate(scene, ast);
  std::vector<int> ids;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] != Truth::kFalse) ids.push_back(scene.regions[i].id);
  }
  return ids;
}

std::vector<std::string> render(const ExpressionAST& ast) {
  std::vector<std::string> w{"the"};
  for (const auto& [name, value] : ast.subject.attrs) w.push_back(value);
  w.push_back(ast.subject.category);
  auto add = [&](std::initializer_list<std::string> words) { w.insert(w.end(), words); };
  if (ast.relational()) add({"that", "is"});
  const std::string& c = ast.subject.category;
  switch (ast.intra) {
    case IntraRelation::kLeftmost: add({"leftmost"}); break;
    case IntraRelation::kRightmost: add({"rightmost"}); break;
    case IntraRelation::kLargest: add({"largest"}); break;
    case IntraRelation::kSecondFromLeft: add({"second", "from", "left"}); break;
    case IntraRelation::kAbovePeer: add({"above", "another", c}); break;
    case IntraRelation::kBelowPeer: add({"below", "another", c}); break;
    case IntraRelation::kNone: break;
  }
  if (ast.intra != IntraRelation::kNone && ast.inter != InterRelation::kNone) add({"and"});
  const std::string& a = ast.anchor;
  switch (ast.inter) {
    case InterRelation::kLeftOf: add({"left", "of", "the", a}); break;
    case InterRelation::kRightOf: add({"right", "of", "the", a}); break;
    case InterRelation::kAbove: add({"above", "the", a}); break;
    case InterRelation::kBelow: add({"below", "the", a}); break;
    case InterRelation::kNearestTo: add({"nearest", "to", "the", a}); break;
    case InterRelation::kNone: break;
  }
  return w;
}

Vocabulary world_vocabulary(const SceneSpec& spec) {
  std::vector<std::string> words{"the",   "that",  "is",    "and",      "another", "of",      "to",
                                 "leftmost", "rightmost", "largest", "second", "from", "left",
                                 "right", "above", "below", "nearest"};
  words.insert(words.end(), spec.categories.begin(), spec.categories.end());
  for (const auto& a : spec.attributes) words.insert(words.end(), a.values.begin(), a.values.end());
  return Vocabulary(words);
}

std::string_view tag_name(SampleTag t) noexcept { return t == SampleTag::kRelational ? "relational" : "attribute-only"; }

SampleTag parse_tag(std::string_view name) {
  if (name == "relational") return SampleTag::kRelational;
  if (name == "attribute-only") return SampleTag::kAttribute;
  throw SchemaError("unknown sample tag: " + std::string(name));
}

void validate(const ExpressionPolicy& p) {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kUsage, "invalid expression policy: " + what); };
  if (p.relational_fraction < 0 || p.relational_fraction > 1) fail("relational_fraction");
  if (p.intra_share < 0 || p.intra_share > 1) fail("intra_share");
  for (const auto& [k, w] : p.intra_weights) {
    if (w < 0 || k == IntraRelation::kNone) fail("intra weights");
  }
  for (const auto& [k, w] : p.inter_weights) {
    if (w < 0 || k == InterRelation::kNone) fail("inter weights");
  }
  if (p.relational_fraction > 0 && !any_positive(p.intra_weights) && !any_positive(p.inter_weights)) {
    fail("relational samples requested but every relation has weight zero");
  }
  if (p.retries == 0) fail("retries");
}

namespace {

// Attribute-name subsets of `names`, smallest first.
std::vector<std::vector<std::string>> subsets_by_size(const std::vector<std::string>& names) {
  std::vector<std::vector<std::string>> out;
  const std::size_t n = names.size();
  for (std::size_t size = 0; size <= n; ++size) {
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != size) continue;
      std::vector<std::string> s;
      for (std::size_t b = 0; b < n; ++b) {
        if (mask & (std::size_t{1} << b)) s.push_back(names[b]);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

SubjectPredicate subject_from(const Region& r, const std::vector<std::string>& names) {
  SubjectPredicate s{r.category, {}};
  for (const auto& n : names) s.attrs[n] = r.attrs.at(n);
  return s;
}

std::vector<std::size_t> matching(const Scene& scene, const SubjectPredicate& s) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scene.regions.size(); ++i) {
    if (matches_subject(scene.regions[i], s)) out.push_back(i);
  }
  return out;
}

// Smallest subjects built from region `r`'s attributes that select exactly `group`.
std::optional<SubjectPredicate> minimal_subject_for(const Scene& scene, std::size_t r,
                                                    const std::vector<std::size_t>& group, std::mt19937_64& rng) {
  std::vector<std::string> names;
  for (const auto& [k, v] : scene.regions[r].attrs) names.push_back(k);
  std::vector<SubjectPredicate> best;
  std::size_t best_size = 0;
  for (const auto& subset : subsets_by_size(names)) {
    if (!best.empty() && subset.size() > best_size) break;
    SubjectPredicate s = subject_from(scene.regions[r], subset);
    if (matching(scene, s) == group) {
      best.push_back(std::move(s));
      best_size = subset.size();
    }
  }
  if (best.empty()) return std::nullopt;
  return pick(rng, best);
}

// Strictly true for the referent and false for everything else.
bool certified(const Scene& scene, const ExpressionAST& ast, std::size_t referent) {
  const auto t = evaluate(scene, ast);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != (i == referent ? Truth::kTrue : Truth::kFalse)) return false;
  }
  return true;
}

LabeledSample make_sample(const Scene& scene, const ExpressionAST& ast, std::size_t referent) {
  LabeledSample s;
  s.scene = scene;
  s.ast = ast;
  s.words = render(ast);
  s.referent_id = scene.regions[referent].id;
  s.tag = ast.relational() ? SampleTag::kRelational : SampleTag::kAttribute;
  return s;
}

}  // namespace

std::optional<SubjectPredicate> minimal_subject(const Scene& scene, std::size_t region, std::mt19937_64& rng) {
  return minimal_subject_for(scene, region, {region}, rng);
}

std::optional<LabeledSample> generate_expression(const Scene& scene, bool relational, const ExpressionPolicy& policy,
                                                 std::mt19937_64& rng) {
  if (scene.regions.empty()) throw Error(ErrorKind::kGeneric, "cannot describe an empty scene");
  std::vector<std::size_t> order(scene.regions.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  if (!relational) {
    for (std::size_t r : order) {
      if (auto s = minimal_subject(scene, r, rng)) {
        ExpressionAST ast{*s, IntraRelation::kNone, InterRelation::kNone, {}};
        if (certified(scene, ast, r)) return make_sample(scene, ast, r);
      }
    }
    return std::nullopt;
  }

  // Enumerate every relational AST whose subject alone is ambiguous, then
  // draw one by family share and relation weight.
  struct Candidate {
    ExpressionAST ast;
    std::size_t referent;
    double weight;
  };
  std::vector<Candidate> intra, inter;
  std::set<std::string> categories;
  for (const auto& r : scene.regions) categories.insert(r.category);
  for (std::size_t r : order) {
    std::vector<std::string> names;
    for (const auto& [k, v] : scene.regions[r].attrs) names.push_back(k);
    for (const auto& subset : subsets_by_size(names)) {
      const SubjectPredicate subj = subject_from(scene.regions[r], subset);
      if (matching(scene, subj).size() < 2) continue;
      for (const auto& [rel, w] : policy.intra_weights) {
        ExpressionAST ast{subj, rel, InterRelation::kNone, {}};
        if (w > 0 && certified(scene, ast, r)) intra.push_back({ast, r, w});
      }
      for (const auto& [rel, w] : policy.inter_weights) {
        if (w <= 0) continue;
        for (const auto& a : categories) {
          if (a == subj.category) continue;
          ExpressionAST ast{subj, IntraRelation::kNone, rel, a};
          if (certified(scene, ast, r)) inter.push_back({ast, r, w});
        }
      }
    }
  }
  if (intra.empty() && inter.empty()) return std::nullopt;
  const bool use_intra = inter.empty() || (!intra.empty() && uniform(rng, 0, 1) < policy.intra_share);
  const auto& pool = use_intra ? intra : inter;
  std::map<std::size_t, double> weights;
  for (std::size_t i = 0; i < pool.size(); ++i) weights[i] = pool[i].weight;
  const Candidate& c = pool[weighted_pick(rng, weights)];
  return make_sample(scene, c.ast, c.referent);
}

namespace {

bool vertical(IntraRelation r) { return r == IntraRelation::kAbovePeer || r == IntraRelation::kBelowPeer; }
bool vertical(InterRelation r) { return r == InterRelation::kAbove || r == InterRelation::kBelow; }
bool horizontal(InterRelation r) { return r == InterRelation::kLeftOf || r == InterRelation::kRightOf; }

// Offset of the partner's centre from its host's centre, for a host of size
// (w, h) and a partner of size (pw, ph).
std::pair<double, double> partner_offset(IntraRelation intra, InterRelation inter, double w, double h, double pw,
                                         double ph, std::mt19937_64& rng) {
  const double gap_x = 0.5 * (w + pw) * uniform(rng, 1.05, 1.6);
  const double gap_y = 0.5 * (h + ph) * uniform(rng, 1.05, 1.6);
  const double jitter_x = 0.2 * std::min(w, pw) * uniform(rng, -1, 1);
  const double jitter_y = 0.2 * std::min(h, ph) * uniform(rng, -1, 1);
  // Partner below the host when the host is "above" it, and so on.
  if (intra == IntraRelation::kAbovePeer || inter == InterRelation::kAbove) return {jitter_x, gap_y};
  if (intra == IntraRelation::kBelowPeer || inter == InterRelation::kBelow) return {jitter_x, -gap_y};
  if (inter == InterRelation::kLeftOf) return {gap_x, jitter_y};
  if (inter == InterRelation::kRightOf) return {-gap_x, jitter_y};
  if (inter == InterRelation::kNearestTo) {
    switch (pick_index(rng, 4)) {
      case 0: return {gap_x, jitter_y};
      case 1: return {-gap_x, jitter_y};
      case 2: return {jitter_x, gap_y};
      default: return {jitter_x, -gap_y};
    }
  }
  return {0.0, 0.0};
}

bool ranking(IntraRelation r) {
  return r == IntraRelation::kLeftmost || r == IntraRelation::kRightmost || r == IntraRelation::kLargest ||
         r == IntraRelation::kSecondFromLeft;
}

BoundingBox centred(double cx, double cy, double w, double h) { return {cx - 0.5 * w, cy - 0.5 * h, w, h}; }

std::optional<LabeledSample> try_relational(const SceneSpec& spec, const ExpressionPolicy& policy,
                                            const AppearanceModel& looks, std::mt19937_64& rng) {
  const bool intra_ok = any_positive(policy.intra_weights);
  const bool inter_ok = any_positive(policy.inter_weights);
  const bool use_intra = intra_ok && (!inter_ok || uniform(rng, 0, 1) < policy.intra_share);
  ExpressionAST ast;
  if (use_intra) {
    ast.intra = weighted_pick(rng, policy.intra_weights);
  } else {
    ast.inter = weighted_pick(rng, policy.inter_weights);
  }
  const std::string category = pick(rng, spec.categories);
  const auto attrs = random_attrs(spec, rng);
  std::vector<std::string> others;
  for (const auto& c : spec.categories) {
    if (c != category) others.push_back(c);
  }
  if (!use_intra && others.empty()) return std::nullopt;
  if (!use_intra) ast.anchor = pick(rng, others);

  const std::size_t copies = std::uniform_int_distribution<std::size_t>(2, 3)(rng);
  const auto [w, h] = random_size(spec, rng);
  const Scene probe{spec.width, spec.height, {}};
  const Margins m = margins_for(probe);

  // Copies share appearance and usually size; they sit in distinct rows (columns)
  // when the relation is horizontal (vertical) so that bands separate them.
  std::vector<Region> regions;
  for (std::size_t i = 0; i < copies; ++i) {
    // Size comparisons need copies of differing size.
    const auto [cw, ch] = ast.intra == IntraRelation::kLargest ? random_size(spec, rng) : std::pair{w, h};
    std::optional<BoundingBox> box;
    for (std::size_t attempt = 0; attempt < spec.placement_retries && !box; ++attempt) {
      box = place(spec, cw, ch, regions, rng);
      if (!box) break;
      for (const auto& other : regions) {
        const bool clash = (vertical(ast.intra) || vertical(ast.inter)) ? same_column(*box, other.box, m) != Truth::kFalse
                           : horizontal(ast.inter)                       ? same_row(*box, other.box, m) != Truth::kFalse
                                                                          : false;
        if (clash) {
          box.reset();
          break;
        }
      }
    }
    if (!box) return std::nullopt;
    Region r;
    r.category = category;
    r.attrs = attrs;
    r.box = *box;
    r.appearance = looks.sample(category, attrs, rng);
    regions.push_back(std::move(r));
  }
  const std::size_t referent = pick_index(rng, copies);

  Region partner;
  partner.category = use_intra ? category : ast.anchor;
  partner.attrs = random_attrs(spec, rng);
  if (use_intra) {
    for (std::size_t attempt = 0; partner.attrs == attrs; ++attempt) {
      if (attempt > 100) return std::nullopt;
      partner.attrs = random_attrs(spec, rng);
    }
  }
  const auto [pw, ph] = random_size(spec, rng);
  // Ranking relations carry no offset: the peer goes anywhere.
  std::optional<BoundingBox> pbox = ranking(ast.intra) ? place(spec, pw, ph, regions, rng) : std::nullopt;
  for (std::size_t attempt = 0; attempt < spec.placement_retries && !pbox && !ranking(ast.intra); ++attempt) {
    const auto [dx, dy] = partner_offset(ast.intra, ast.inter, w, h, pw, ph, rng);
    // The offset must be feasible from every copy, so the referent is not
    // singled out by having room for its partner.
    const bool everywhere = std::all_of(regions.begin(), regions.end(), [&](const Region& r) {
      return fits(centred(r.box.x_c() + dx, r.box.y_c() + dy, pw, ph), spec);
    });
    if (!everywhere) continue;
    const BoundingBox b = centred(regions[referent].box.x_c() + dx, regions[referent].box.y_c() + dy, pw, ph);
    if (clear_of(b, regions, spec.max_iou)) pbox = b;
  }
  if (!pbox) return std::nullopt;
  partner.box = *pbox;
  partner.appearance = looks.sample(partner.category, partner.attrs, rng);
  regions.push_back(std::move(partner));

  std::vector<std::string> filler_cats;
  for (const auto& c : others) {
    if (c != ast.anchor) filler_cats.push_back(c);
  }
  const std::size_t placed = regions.size();
  const std::size_t lo = spec.min_regions > placed ? spec.min_regions - placed : 0;
  const std::size_t hi = spec.max_regions > placed ? spec.max_regions - placed : 0;
  const std::size_t fillers = std::uniform_int_distribution<std::size_t>(lo, std::max(lo, hi))(rng);
  if (fillers > 0 && filler_cats.empty()) return std::nullopt;
  for (std::size_t f = 0; f < fillers; ++f) {
    Region r;
    r.category = pick(rng, filler_cats);
    r.attrs = random_attrs(spec, rng);
    const auto [fw, fh] = random_size(spec, rng);
    const auto box = place(spec, fw, fh, regions, rng);
    if (!box) return std::nullopt;
    r.box = *box;
    r.appearance = looks.sample(r.category, r.attrs, rng);
    regions.push_back(std::move(r));
  }

  // Shuffle so that node order carries no information, then number in order.
  std::vector<std::size_t> perm(regions.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Scene scene{spec.width, spec.height, {}};
  std::size_t referent_index = 0;
  std::vector<std::size_t> group;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    Region r = regions[perm[i]];
    r.id = static_cast<int>(i);
    if (perm[i] == referent) referent_index = i;
    if (perm[i] < copies) group.push_back(i);
    scene.regions.push_back(std::move(r));
  }
  const auto subject = minimal_subject_for(scene, referent_index, group, rng);
  if (!subject) return std::nullopt;
  ast.subject = *subject;
  if (!certified(scene, ast, referent_index)) return std::nullopt;
  if (resolve_oracle(scene, ast.subject_only()).size() < 2) return std::nullopt;
  return make_sample(scene, ast, referent_index);
}

}  // namespace

LabeledSample generate_relational(const SceneSpec& spec, const ExpressionPolicy& policy, std::mt19937_64& rng) {
  validate(spec);
  validate(policy);
  const AppearanceModel looks(spec);
  for (std::size_t attempt = 0; attempt < policy.retries; ++attempt) {
    if (auto s = try_relational(spec, policy, looks, rng)) return std::move(*s);
  }
  throw GenerationError("no certified relational sample within the retry budget");
}

LabeledSample generate_sample(const SceneSpec& spec, const ExpressionPolicy& policy, std::mt19937_64& rng) {
  validate(policy);
  if (uniform(rng, 0, 1) < policy.relational_fraction) return generate_relational(spec, policy, rng);
  for (std::size_t attempt = 0; attempt < policy.retries; ++attempt) {
    const Scene scene = generate_scene(spec, rng);
    if (auto s = generate_expression(scene, false, policy, rng)) return std::move(*s);
  }
  throw GenerationError("no certified attribute-only sample within the retry budget");
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  // splitmix64 finalizer over a golden-ratio stride.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<LabeledSample> generate_dataset(const SceneSpec& spec, const ExpressionPolicy& policy, std::size_t count,
                                            std::uint64_t seed) {
  std::vector<LabeledSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(substream_seed(seed, i));
    out.push_back(generate_sample(spec, policy, rng));
  }
  return out;
}

}  // namespace lgran
