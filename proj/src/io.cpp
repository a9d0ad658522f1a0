#include "lgran/io.hpp"

#include "lgran/errors.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace lgran {

namespace {

// Reads optional keys from a JSON object and rejects any it was not asked about.
class Fields {
 public:
  Fields(const Json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw SchemaError(context_ + ": expected an object");
  }

  template <class T>
  bool get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(context_ + "." + key + ": " + e.what());
    }
    return true;
  }

  const Json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw SchemaError(context_ + ": unknown key \"" + it.key() + "\"");
    }
  }

 private:
  const Json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

void check_version(Fields& f, int expected, const char* what) {
  int version = expected;
  f.get("format_version", version);
  if (version != expected) {
    throw IncompatibleError(std::string(what) + " format_version " + std::to_string(version) + " (expected " +
                            std::to_string(expected) + ")");
  }
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return Json{{"dims", {{"embed", c.dims.embed}, {"encoder", c.dims.encoder}, {"attention", c.dims.attention},
                        {"match", c.dims.match}}},
              {"appearance_dim", c.appearance_dim},
              {"k", c.k},
              {"norm", norm_mode_name(c.norm)},
              {"dropout", c.dropout},
              {"variant", variant_name(c.variant)},
              {"init_seed", c.init_seed}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"model", to_json(c.model)},
              {"batch_images", c.batch_images},
              {"base_lr", c.base_lr},
              {"decay_every", c.decay_every},
              {"iterations", c.iterations},
              {"seed", c.seed},
              {"eval_every", c.eval_every},
              {"checkpoint_every", c.checkpoint_every},
              {"patience", c.patience}};
}

Json to_json(const SceneSpec& s) {
  Json attrs = Json::array();
  for (const auto& a : s.attributes) attrs.push_back({{"name", a.name}, {"values", a.values}});
  return Json{{"width", s.width},
              {"height", s.height},
              {"categories", s.categories},
              {"attributes", attrs},
              {"min_regions", s.min_regions},
              {"max_regions", s.max_regions},
              {"min_side", s.min_side},
              {"max_side", s.max_side},
              {"max_iou", s.max_iou},
              {"duplicate_rate", s.duplicate_rate},
              {"noise", s.noise},
              {"appearance_dim", s.appearance_dim},
              {"world_seed", s.world_seed},
              {"placement_retries", s.placement_retries}};
}

Json to_json(const ExpressionPolicy& p) {
  Json intra = Json::object(), inter = Json::object();
  for (const auto& [k, w] : p.intra_weights) intra[std::string(relation_name(k))] = w;
  for (const auto& [k, w] : p.inter_weights) inter[std::string(relation_name(k))] = w;
  return Json{{"relational_fraction", p.relational_fraction},
              {"intra_share", p.intra_share},
              {"intra_weights", intra},
              {"inter_weights", inter},
              {"retries", p.retries}};
}

Json to_json(const ExpressionAST& a) {
  Json j{{"subject", {{"category", a.subject.category}, {"attrs", a.subject.attrs}}},
         {"intra", relation_name(a.intra)},
         {"inter", relation_name(a.inter)}};
  if (a.inter != InterRelation::kNone) j["anchor"] = a.anchor;
  return j;
}

ModelConfig model_config_from_json(const Json& j, ModelConfig c) {
  Fields f(j, "model");
  if (const Json* d = f.sub("dims")) {
    Fields fd(*d, "model.dims");
    fd.get("embed", c.dims.embed);
    fd.get("encoder", c.dims.encoder);
    fd.get("attention", c.dims.attention);
    fd.get("match", c.dims.match);
    fd.finish();
  }
  f.get("appearance_dim", c.appearance_dim);
  f.get("k", c.k);
  std::string name;
  if (f.get("norm", name)) c.norm = parse_norm_mode(name);
  f.get("dropout", c.dropout);
  if (f.get("variant", name)) c.variant = parse_variant(name);
  f.get("init_seed", c.init_seed);
  f.finish();
  return c;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  Fields f(j, "train");
  check_version(f, kConfigFormat, "config");
  if (const Json* m = f.sub("model")) c.model = model_config_from_json(*m, c.model);
  f.get("batch_images", c.batch_images);
  f.get("base_lr", c.base_lr);
  f.get("decay_every", c.decay_every);
  f.get("iterations", c.iterations);
  f.get("seed", c.seed);
  f.get("eval_every", c.eval_every);
  f.get("checkpoint_every", c.checkpoint_every);
  f.get("patience", c.patience);
  f.finish();
  return c;
}

SceneSpec scene_spec_from_json(const Json& j, SceneSpec s) {
  Fields f(j, "scene_spec");
  check_version(f, kConfigFormat, "scene spec");
  f.get("width", s.width);
  f.get("height", s.height);
  f.get("categories", s.categories);
  if (const Json* attrs = f.sub("attributes")) {
    if (!attrs->is_array()) throw SchemaError("scene_spec.attributes: expected an array");
    s.attributes.clear();
    for (const auto& a : *attrs) {
      Fields fa(a, "scene_spec.attributes[]");
      AttributeSpec spec;
      fa.get("name", spec.name);
      fa.get("values", spec.values);
      fa.finish();
      s.attributes.push_back(std::move(spec));
    }
  }
  f.get("min_regions", s.min_regions);
  f.get("max_regions", s.max_regions);
  f.get("min_side", s.min_side);
  f.get("max_side", s.max_side);
  f.get("max_iou", s.max_iou);
  f.get("duplicate_rate", s.duplicate_rate);
  f.get("noise", s.noise);
  f.get("appearance_dim", s.appearance_dim);
  f.get("world_seed", s.world_seed);
  f.get("placement_retries", s.placement_retries);
  f.finish();
  return s;
}

ExpressionPolicy policy_from_json(const Json& j, ExpressionPolicy p) {
  Fields f(j, "policy");
  check_version(f, kConfigFormat, "policy");
  f.get("relational_fraction", p.relational_fraction);
  f.get("intra_share", p.intra_share);
  if (const Json* w = f.sub("intra_weights")) {
    if (!w->is_object()) throw SchemaError("policy.intra_weights: expected an object");
    for (auto it = w->begin(); it != w->end(); ++it) p.intra_weights[parse_intra_relation(it.key())] = it->get<double>();
  }
  if (const Json* w = f.sub("inter_weights")) {
    if (!w->is_object()) throw SchemaError("policy.inter_weights: expected an object");
    for (auto it = w->begin(); it != w->end(); ++it) p.inter_weights[parse_inter_relation(it.key())] = it->get<double>();
  }
  f.get("retries", p.retries);
  f.finish();
  return p;
}

ExpressionAST ast_from_json(const Json& j) {
  Fields f(j, "ast");
  ExpressionAST a;
  const Json* subj = f.sub("subject");
  if (!subj) throw SchemaError("ast: missing subject");
  Fields fs(*subj, "ast.subject");
  if (!fs.get("category", a.subject.category)) throw SchemaError("ast.subject: missing category");
  fs.get("attrs", a.subject.attrs);
  fs.finish();
  std::string name;
  if (f.get("intra", name)) a.intra = parse_intra_relation(name);
  if (f.get("inter", name)) a.inter = parse_inter_relation(name);
  f.get("anchor", a.anchor);
  f.finish();
  if ((a.inter != InterRelation::kNone) == a.anchor.empty()) {
    throw SchemaError("ast: an anchor is required exactly when an inter-class relation is present");
  }
  return a;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string config_hash(const ModelConfig& c) { return fnv1a_hex(to_json(c).dump()); }
std::string config_hash(const TrainConfig& c) { return fnv1a_hex(to_json(c).dump()); }

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

// ---- datasets ----

std::vector<DatasetScene> to_dataset(const std::vector<LabeledSample>& samples) {
  std::vector<DatasetScene> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back({s.scene, {{s.words, s.referent_id, s.ast, s.tag}}});
  }
  return out;
}

std::string dataset_line(const DatasetScene& d) {
  Json regions = Json::array();
  for (const auto& r : d.scene.regions) {
    Json jr{{"id", r.id},
            {"category", r.category},
            {"box", {r.box.x, r.box.y, r.box.w, r.box.h}},
            {"attrs", r.attrs}};
    if (!r.appearance.empty()) jr["feature"] = r.appearance;
    regions.push_back(std::move(jr));
  }
  Json exprs = Json::array();
  for (const auto& e : d.expressions) {
    Json je{{"tokens", e.tokens}, {"referent_id", e.referent_id}};
    if (e.ast) je["ast"] = to_json(*e.ast);
    je["tag"] = tag_name(e.tag);
    exprs.push_back(std::move(je));
  }
  Json j{{"format_version", kDatasetFormat},
         {"image", {d.scene.width, d.scene.height}},
         {"regions", regions},
         {"expressions", exprs}};
  return j.dump();
}

DatasetScene parse_dataset_line(std::string_view line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number);
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(where + ": " + e.what());
  }
  try {
    Fields f(j, where);
    check_version(f, kDatasetFormat, "dataset");
    DatasetScene d;
    std::vector<double> image;
    if (!f.get("image", image) || image.size() != 2 || !(image[0] > 0) || !(image[1] > 0)) {
      throw SchemaError(where + ": image must be [W, H] with positive entries");
    }
    d.scene.width = image[0];
    d.scene.height = image[1];
    const Json* regions = f.sub("regions");
    if (!regions || !regions->is_array() || regions->empty()) throw SchemaError(where + ": regions must be a nonempty array");
    std::set<int> ids;
    for (const auto& jr : *regions) {
      Fields fr(jr, where + ": region");
      Region r;
      std::vector<double> box;
      if (!fr.get("id", r.id)) throw SchemaError(where + ": region without id");
      if (!fr.get("category", r.category) || r.category.empty()) throw SchemaError(where + ": region without category");
      if (!fr.get("box", box) || box.size() != 4) throw SchemaError(where + ": box must be [x, y, w, h]");
      r.box = {box[0], box[1], box[2], box[3]};
      if (!box_valid(r.box, d.scene.width, d.scene.height)) {
        throw SchemaError(where + ": box of region " + std::to_string(r.id) + " is empty or outside the image");
      }
      fr.get("attrs", r.attrs);
      fr.get("feature", r.appearance);
      fr.finish();
      if (!ids.insert(r.id).second) throw SchemaError(where + ": duplicate region id " + std::to_string(r.id));
      d.scene.regions.push_back(std::move(r));
    }
    const Json* exprs = f.sub("expressions");
    if (!exprs || !exprs->is_array()) throw SchemaError(where + ": expressions must be an array");
    for (const auto& je : *exprs) {
      Fields fe(je, where + ": expression");
      DatasetExpression e;
      if (!fe.get("tokens", e.tokens) || e.tokens.empty()) throw SchemaError(where + ": expression without tokens");
      if (!fe.get("referent_id", e.referent_id)) throw SchemaError(where + ": expression without referent_id");
      if (!ids.count(e.referent_id)) {
        throw SchemaError(where + ": referent_id " + std::to_string(e.referent_id) + " is not a region of this scene");
      }
      if (const Json* ast = fe.sub("ast")) e.ast = ast_from_json(*ast);
      std::string tag = "attribute-only";
      fe.get("tag", tag);
      e.tag = parse_tag(tag);
      fe.finish();
      d.expressions.push_back(std::move(e));
    }
    f.finish();
    return d;
  } catch (const SchemaError& e) {
    const std::string msg = e.what();
    if (msg.rfind(where, 0) == 0) throw;
    throw SchemaError(where + ": " + msg);
  }
}

void write_dataset(std::ostream& out, const std::vector<DatasetScene>& scenes) {
  for (const auto& s : scenes) out << dataset_line(s) << '\n';
}

std::vector<DatasetScene> read_dataset(std::istream& in) {
  std::vector<DatasetScene> out;
  std::string line;
  std::size_t number = 0;
  std::optional<std::size_t> dim;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    out.push_back(parse_dataset_line(line, number));
    for (const auto& r : out.back().scene.regions) {
      if (!dim) dim = r.appearance.size();
      if (r.appearance.size() != *dim) {
        throw SchemaError("line " + std::to_string(number) + ": feature length " +
                          std::to_string(r.appearance.size()) + " differs from " + std::to_string(*dim));
      }
    }
  }
  return out;
}

void write_dataset_file(const std::filesystem::path& path, const std::vector<DatasetScene>& scenes) {
  std::ostringstream out;
  write_dataset(out, scenes);
  write_text_file(path, out.str());
}

std::vector<DatasetScene> read_dataset_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_dataset(in);
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void apply_feature_file(std::vector<DatasetScene>& scenes, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const std::string where = path.string() + ": line " + std::to_string(number);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(where + ": " + e.what());
    }
    Fields f(j, where);
    std::size_t scene = 0;
    int region = 0;
    std::vector<double> feature;
    if (!f.get("scene", scene) || !f.get("region", region) || !f.get("feature", feature)) {
      throw SchemaError(where + ": needs scene, region and feature");
    }
    f.finish();
    if (scene >= scenes.size()) throw SchemaError(where + ": scene index out of range");
    auto& regions = scenes[scene].scene.regions;
    auto it = std::find_if(regions.begin(), regions.end(), [&](const Region& r) { return r.id == region; });
    if (it == regions.end()) throw SchemaError(where + ": no region " + std::to_string(region));
    it->appearance = std::move(feature);
  }
}

// ---- checkpoints ----

namespace {

void write_doubles(std::ostream& out, std::span<const double> v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& in, std::span<double> v) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != v.size() * sizeof(double)) throw SchemaError("truncated checkpoint");
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model, const Vocabulary& vocab, const CheckpointExtras& extras) {
  static_assert(sizeof(double) == 8);
  if (vocab.size() != model.vocab_size()) throw IncompatibleError("vocabulary size does not match the model");
  const ParamStore& store = model.store();
  Json params = Json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& t = store.value(store.at(i));
    params.push_back({{"name", store.name(store.at(i))}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  Json header{{"format_version", kCheckpointFormat},
              {"kind", "lgran-checkpoint"},
              {"config", to_json(model.config())},
              {"config_hash", config_hash(model.config())},
              {"vocab", vocab.tokens()},
              {"params", params},
              {"scalar_count", offset},
              {"iteration", extras.iteration},
              {"rng", extras.rng_state}};
  if (extras.adam) {
    const auto& h = extras.adam->hyper;
    header["adam"] = {{"t", extras.adam->t}, {"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}};
  } else {
    header["adam"] = nullptr;
  }
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < store.size(); ++i) write_doubles(out, store.value(store.at(i)).data());
  if (extras.adam) {
    if (extras.adam->m.size() != store.size()) throw ShapeError("optimizer state does not match the model");
    for (const auto& m : extras.adam->m) write_doubles(out, m.data());
    for (const auto& v : extras.adam->v) write_doubles(out, v.data());
  }
  if (!out) throw IoError("failed writing checkpoint");
}

LoadedCheckpoint load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty checkpoint");
  Json h;
  try {
    h = Json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("checkpoint header: ") + e.what());
  }
  if (!h.is_object() || h.value("kind", "") != "lgran-checkpoint") throw SchemaError("not a checkpoint");
  if (h.value("format_version", -1) != kCheckpointFormat) {
    throw IncompatibleError("checkpoint format_version " + h["format_version"].dump());
  }
  try {
    const ModelConfig config = model_config_from_json(h.at("config"));
    if (h.at("config_hash").get<std::string>() != config_hash(config)) throw SchemaError("checkpoint config hash mismatch");
    const auto tokens = h.at("vocab").get<std::vector<std::string>>();
    Vocabulary vocab(tokens);
    if (vocab.tokens() != tokens) throw SchemaError("checkpoint vocabulary is not a sorted token list");
    LoadedCheckpoint out{Model(config, vocab.size()), std::move(vocab), {}};
    ParamStore& store = out.model.store();
    const Json& params = h.at("params");
    if (!params.is_array() || params.size() != store.size()) throw IncompatibleError("checkpoint parameter list differs from the model");
    for (std::size_t i = 0; i < store.size(); ++i) {
      const ParamId id = store.at(i);
      if (params[i].at("name").get<std::string>() != store.name(id) ||
          params[i].at("shape").get<Tensor::Shape>() != store.value(id).shape()) {
        throw IncompatibleError("checkpoint parameter " + params[i].at("name").get<std::string>() +
                                " does not match the model");
      }
    }
    for (std::size_t i = 0; i < store.size(); ++i) read_doubles(in, store.value(store.at(i)).data());
    out.extras.iteration = h.at("iteration").get<std::size_t>();
    out.extras.rng_state = h.at("rng").get<std::string>();
    if (!h.at("adam").is_null()) {
      const Json& a = h.at("adam");
      AdamHyper hyper{a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                      a.at("eps").get<double>()};
      AdamState state(store, hyper);
      state.t = a.at("t").get<std::int64_t>();
      for (auto& m : state.m) read_doubles(in, m.data());
      for (auto& v : state.v) read_doubles(in, v.data());
      out.extras.adam = std::move(state);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("checkpoint header: ") + e.what());
  }
}

void save_checkpoint_file(const std::filesystem::path& path, const Model& model, const Vocabulary& vocab,
                          const CheckpointExtras& extras) {
  std::ostringstream out(std::ios::binary);
  save_checkpoint(out, model, vocab, extras);
  write_text_file(path, out.str());
}

LoadedCheckpoint load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return load_checkpoint(in);
}

// ---- attention export ----

Json attention_dump(const Scene& scene, const ObjectGraph& graph, const std::vector<std::string>& tokens,
                    const Prediction& p, Variant variant, std::optional<int> referent_id) {
  const auto& a = p.attention;
  Json nodes = Json::array();
  for (std::size_t i = 0; i < graph.node_count; ++i) {
    Json n{{"index", i}, {"region_id", graph.region_ids[i]}, {"category", scene.regions[i].category}};
    n["attention"] = a.node.empty() ? Json(nullptr) : Json(a.node[i]);
    nodes.push_back(std::move(n));
  }
  auto edges = [&](const std::vector<GraphEdge>& list, const std::vector<double>& att) {
    Json out = Json::array();
    if (att.empty()) return out;
    for (std::size_t e = 0; e < list.size(); ++e) {
      out.push_back({{"i", graph.region_ids[list[e].src]}, {"j", graph.region_ids[list[e].dst]}, {"value", att[e]}});
    }
    return out;
  };
  Json weights = nullptr;
  if (!a.component_weights.empty()) {
    weights = {{"subject", a.component_weights[kSubject]},
               {"intra", a.component_weights[kIntra]},
               {"inter", a.component_weights[kInter]}};
  }
  Json graph_nodes = Json::array();
  for (std::size_t i = 0; i < graph.node_count; ++i) {
    const auto& r = scene.regions[i];
    Json intra_ids = Json::array(), inter_ids = Json::array();
    for (std::size_t j : graph.intra_neighbors[i]) intra_ids.push_back(graph.region_ids[j]);
    for (std::size_t j : graph.inter_neighbors[i]) inter_ids.push_back(graph.region_ids[j]);
    graph_nodes.push_back({{"region_id", r.id},
                           {"category", r.category},
                           {"box", {r.box.x, r.box.y, r.box.w, r.box.h}},
                           {"intra_neighbors", intra_ids},
                           {"inter_neighbors", inter_ids}});
  }
  auto edge_features = [&](const std::vector<GraphEdge>& list) {
    Json out = Json::array();
    for (const auto& e : list) {
      out.push_back({{"i", graph.region_ids[e.src]}, {"j", graph.region_ids[e.dst]}, {"feature", e.feature}});
    }
    return out;
  };
  return Json{{"format_version", kAttentionDumpFormat},
              {"variant", variant_name(variant)},
              {"tokens", tokens},
              {"token_attention",
               {{"subject", a.token_attention[kSubject]}, {"intra", a.token_attention[kIntra]},
                {"inter", a.token_attention[kInter]}}},
              {"component_weights", weights},
              {"nodes", nodes},
              {"intra_edges", edges(graph.intra_edges, a.intra)},
              {"inter_edges", edges(graph.inter_edges, a.inter)},
              {"scores",
               {{"p_obj", p.match.p_obj},
                {"p_intra", p.match.p_intra},
                {"p_inter", p.match.p_inter},
                {"p", p.match.scores},
                {"prob", p.match.prob}}},
              {"prediction", {{"index", p.index}, {"region_id", p.region_id}}},
              {"referent_id", referent_id ? Json(*referent_id) : Json(nullptr)},
              {"graph",
               {{"nodes", graph_nodes},
                {"intra_edges", edge_features(graph.intra_edges)},
                {"inter_edges", edge_features(graph.inter_edges)}}}};
}

namespace {

std::string fixed(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

std::string escape_xml(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string attention_svg(const Scene& scene, const ObjectGraph& graph, const std::vector<std::string>& tokens,
                          const Prediction& p, std::optional<int> referent_id) {
  const double W = scene.width, H = scene.height;
  const double caption = 28;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(W) << "\" height=\"" << fixed(H + caption)
    << "\" viewBox=\"0 0 " << fixed(W) << ' ' << fixed(H + caption) << "\">\n";
  s << "<defs>\n";
  for (const auto& [id, colour] : {std::pair{"intra", "#1f5fbf"}, std::pair{"inter", "#d62728"}}) {
    s << "<marker id=\"arrow-" << id << "\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"5\" "
      << "markerHeight=\"5\" orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\" fill=\"" << colour << "\"/></marker>\n";
  }
  s << "</defs>\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << fixed(W) << "\" height=\"" << fixed(H)
    << "\" fill=\"#f4f4f4\" stroke=\"#888\"/>\n";

  const auto& node = p.attention.node;
  const double peak = node.empty() ? 1.0 : *std::max_element(node.begin(), node.end());
  for (std::size_t i = 0; i < graph.node_count; ++i) {
    const auto& r = scene.regions[i];
    // Without node attention every box gets the same light shading.
    const double shade = node.empty() ? 0.15 : 0.75 * node[i] / peak;
    const bool predicted = i == p.index;
    const bool referent = referent_id && r.id == *referent_id;
    s << "<rect class=\"region\" data-id=\"" << r.id << "\" x=\"" << fixed(r.box.x) << "\" y=\"" << fixed(r.box.y)
      << "\" width=\"" << fixed(r.box.w) << "\" height=\"" << fixed(r.box.h) << "\" fill=\"#ff9900\" fill-opacity=\""
      << fixed(shade) << "\" stroke=\"" << (predicted ? "#2ca02c" : "#333") << "\" stroke-width=\""
      << (predicted ? 3 : 1) << "\"" << (referent ? " stroke-dasharray=\"6 3\"" : "") << "/>\n";
    s << "<text x=\"" << fixed(r.box.x + 3) << "\" y=\"" << fixed(r.box.y + 13)
      << "\" font-size=\"11\" font-family=\"sans-serif\">" << escape_xml(r.category) << ' ' << r.id << "</text>\n";
  }
  auto draw = [&](const std::vector<GraphEdge>& edges, const std::vector<double>& att, const char* kind,
                  const char* colour) {
    for (std::size_t e = 0; e < edges.size() && e < att.size(); ++e) {
      const auto& a = scene.regions[edges[e].src].box;
      const auto& b = scene.regions[edges[e].dst].box;
      s << "<line class=\"" << kind << "\" x1=\"" << fixed(a.x_c()) << "\" y1=\"" << fixed(a.y_c()) << "\" x2=\""
        << fixed(b.x_c()) << "\" y2=\"" << fixed(b.y_c()) << "\" stroke=\"" << colour << "\" stroke-width=\""
        << fixed(0.5 + 4.5 * att[e]) << "\" stroke-opacity=\"0.8\" marker-end=\"url(#arrow-" << kind << ")\"/>\n";
    }
  };
  draw(graph.intra_edges, p.attention.intra, "intra", "#1f5fbf");
  draw(graph.inter_edges, p.attention.inter, "inter", "#d62728");

  std::string text;
  for (const auto& t : tokens) text += (text.empty() ? "" : " ") + t;
  s << "<text x=\"4\" y=\"" << fixed(H + 19) << "\" font-size=\"14\" font-family=\"sans-serif\">"
    << escape_xml(text) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace lgran
