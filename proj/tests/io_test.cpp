#include "lgran/errors.hpp"
#include "lgran/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

namespace lgran {
namespace {

ModelConfig small_config(Variant v = Variant::kLgrans) {
  ModelConfig c;
  c.dims = {8, 6, 5, 4};
  c.appearance_dim = 64;
  c.k = 3;
  c.variant = v;
  c.init_seed = 5;
  return c;
}

std::vector<DatasetScene> small_dataset(std::size_t n, std::uint64_t seed = 7) {
  return to_dataset(generate_dataset(SceneSpec{}, ExpressionPolicy{}, n, seed));
}

TEST(DatasetIo, MinimalLineRoundTripsUnchanged) {
  const std::string line =
      R"({"format_version":1,"image":[100.0,80.0],"regions":[{"id":3,"category":"dog","box":[10.0,12.5,30.0,20.0],)"
      R"("attrs":{"color":"red"},"feature":[0.5,-1.25]}],"expressions":[{"tokens":["the","red","dog"],)"
      R"("referent_id":3,"tag":"attribute-only"}]})";
  const DatasetScene d = parse_dataset_line(line, 1);
  ASSERT_EQ(d.scene.regions.size(), 1u);
  EXPECT_EQ(d.scene.regions[0].attrs.at("color"), "red");
  EXPECT_EQ(d.expressions[0].referent_id, 3);
  EXPECT_FALSE(d.expressions[0].ast);
  EXPECT_EQ(dataset_line(d), line);
}

TEST(DatasetIo, MissingReferentNamesTheLine) {
  std::istringstream in(
      dataset_line(small_dataset(1)[0]) + "\n" +
      R"({"format_version":1,"image":[100,80],"regions":[{"id":0,"category":"dog","box":[1,1,5,5]}],)"
      R"("expressions":[{"tokens":["dog"],"referent_id":9,"tag":"attribute-only"}]})" + "\n");
  try {
    read_dataset(in);
    FAIL() << "expected a schema error";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("referent_id 9"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, SchemaViolationsAreRejected) {
  const std::string region = R"({"id":0,"category":"dog","box":[1,1,5,5]})";
  const std::string expr = R"([{"tokens":["dog"],"referent_id":0}])";
  auto line = [&](const std::string& regions, const std::string& extra = "") {
    return R"({"image":[100,80],"regions":[)" + regions + R"(],"expressions":)" + expr + extra + "}";
  };
  EXPECT_NO_THROW(parse_dataset_line(line(region), 1));
  EXPECT_THROW(parse_dataset_line(line(region + "," + region), 1), SchemaError);
  EXPECT_THROW(parse_dataset_line(line(region, R"(,"surprise":1)"), 1), SchemaError);
  EXPECT_THROW(parse_dataset_line(line(R"({"id":0,"category":"dog","box":[90,1,50,5]})"), 1), SchemaError);
  EXPECT_THROW(parse_dataset_line(line(R"({"id":0,"category":"dog","box":[1,1,5]})"), 1), SchemaError);
  EXPECT_THROW(parse_dataset_line(line(R"({"id":"zero","category":"dog","box":[1,1,5,5]})"), 1), SchemaError);
  EXPECT_THROW(parse_dataset_line("{not json", 1), SchemaError);
  EXPECT_THROW(parse_dataset_line(R"({"format_version":2,"image":[1,1],"regions":[],"expressions":[]})", 1),
               IncompatibleError);
}

TEST(DatasetIo, GeneratedDatasetReserializesToIdenticalBytes) {
  const auto scenes = small_dataset(500);
  std::ostringstream first;
  write_dataset(first, scenes);
  std::istringstream in(first.str());
  const auto loaded = read_dataset(in);
  EXPECT_EQ(loaded, scenes);
  std::ostringstream second;
  write_dataset(second, loaded);
  EXPECT_EQ(first.str(), second.str());
}

TEST(DatasetIo, FeatureFileOverridesVectors) {
  auto scenes = small_dataset(2);
  const auto path = std::filesystem::temp_directory_path() / "lgran_io_features.jsonl";
  const int id = scenes[1].scene.regions[0].id;
  write_text_file(path, R"({"scene":1,"region":)" + std::to_string(id) + R"(,"feature":[1,2,3]})" + "\n");
  apply_feature_file(scenes, path);
  EXPECT_EQ(scenes[1].scene.regions[0].appearance, (std::vector<double>{1, 2, 3}));
  write_text_file(path, R"({"scene":5,"region":0,"feature":[1]})" "\n");
  EXPECT_THROW(apply_feature_file(scenes, path), SchemaError);
  std::filesystem::remove(path);
}

TEST(ConfigIo, RoundTripAndLayering) {
  TrainConfig c;
  c.model = small_config(Variant::kEdgeAttn);
  c.model.norm = NormMode::kBatch;
  c.iterations = 17;
  c.base_lr = 0.1 + 0.2;  // not exactly representable in short decimal
  EXPECT_EQ(train_config_from_json(to_json(c)), c);

  const TrainConfig partial = train_config_from_json(Json::parse(R"({"iterations":3,"model":{"dims":{"embed":9}}})"));
  EXPECT_EQ(partial.iterations, 3u);
  EXPECT_EQ(partial.model.dims.embed, 9u);
  EXPECT_EQ(partial.model.dims.encoder, TrainConfig{}.model.dims.encoder);
  EXPECT_THROW(train_config_from_json(Json::parse(R"({"iterashuns":3})")), SchemaError);
  EXPECT_THROW(train_config_from_json(Json::parse(R"({"model":{"variant":"Bogus"}})")), Error);

  SceneSpec s;
  s.noise = 0.0;
  s.categories = {"a", "b"};
  EXPECT_EQ(to_json(scene_spec_from_json(to_json(s))), to_json(s));
  ExpressionPolicy p;
  p.intra_weights[IntraRelation::kLeftmost] = 2.5;
  EXPECT_EQ(to_json(policy_from_json(to_json(p))), to_json(p));
}

TEST(ConfigIo, HashIsStableAndSensitive) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  ModelConfig a = small_config(), b = small_config();
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.k = 4;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(AstIo, RoundTripsEveryRelation) {
  for (auto intra : {IntraRelation::kNone, IntraRelation::kLeftmost, IntraRelation::kBelowPeer}) {
    for (auto inter : {InterRelation::kNone, InterRelation::kNearestTo}) {
      ExpressionAST a;
      a.subject = {"cat", {{"color", "red"}}};
      a.intra = intra;
      a.inter = inter;
      if (inter != InterRelation::kNone) a.anchor = "dog";
      EXPECT_EQ(ast_from_json(to_json(a)), a);
    }
  }
  EXPECT_THROW(ast_from_json(Json::parse(R"({"subject":{"category":"cat"},"inter":"left_of"})")), SchemaError);
}

TEST(CheckpointIo, RoundTripGivesBitIdenticalPredictions) {
  const SceneSpec spec;
  const Vocabulary vocab = world_vocabulary(spec);
  Model model(small_config(), vocab.size());
  // Move away from the initialisation so a silent re-init would be caught.
  for (std::size_t i = 0; i < model.store().size(); ++i) {
    for (auto& v : model.store().value(model.store().at(i)).data()) v = v * 1.5 + 1e-3 * static_cast<double>(i);
  }
  AdamState adam(model.store(), AdamHyper{});
  adam.t = 42;
  adam.m[0].data()[0] = 0.125;
  adam.v.back().data()[0] = 3.0;
  std::stringstream buffer;
  save_checkpoint(buffer, model, vocab, {12, adam, "rng-state"});
  const LoadedCheckpoint loaded = load_checkpoint(buffer);

  EXPECT_EQ(loaded.model.config(), model.config());
  EXPECT_EQ(loaded.vocab.tokens(), vocab.tokens());
  EXPECT_EQ(loaded.extras.iteration, 12u);
  EXPECT_EQ(loaded.extras.rng_state, "rng-state");
  ASSERT_TRUE(loaded.extras.adam);
  EXPECT_EQ(loaded.extras.adam->t, 42);
  EXPECT_EQ(loaded.extras.adam->m[0].data()[0], 0.125);
  EXPECT_EQ(loaded.extras.adam->v.back().data()[0], 3.0);
  for (std::size_t i = 0; i < model.store().size(); ++i) {
    const auto a = model.store().value(model.store().at(i)).data();
    const auto b = loaded.model.store().value(loaded.model.store().at(i)).data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
  for (const auto& d : small_dataset(30)) {
    const ObjectGraph g = build_graph(d.scene, 3);
    const Expression e = to_expression(d.expressions[0].tokens, vocab);
    const Prediction p = predict(model, g, e), q = predict(loaded.model, g, e);
    EXPECT_EQ(p.index, q.index);
    EXPECT_EQ(p.match.scores, q.match.scores);
    EXPECT_EQ(p.attention.node, q.attention.node);
  }
}

TEST(CheckpointIo, RejectsMismatchesAndTruncation) {
  const Vocabulary vocab = world_vocabulary(SceneSpec{});
  Model model(small_config(), vocab.size());
  std::stringstream buffer;
  save_checkpoint(buffer, model, vocab);
  const std::string bytes = buffer.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(truncated), SchemaError);

  Json header = Json::parse(bytes.substr(0, bytes.find('\n')));
  const std::string body = bytes.substr(bytes.find('\n'));
  Json renamed = header;
  renamed["params"][0]["name"] = "lang.other";
  std::stringstream bad_name(renamed.dump() + body);
  EXPECT_THROW(load_checkpoint(bad_name), IncompatibleError);

  Json future = header;
  future["format_version"] = 2;
  std::stringstream bad_version(future.dump() + body);
  EXPECT_THROW(load_checkpoint(bad_version), IncompatibleError);

  Json tampered = header;
  tampered["config"]["k"] = 4;
  std::stringstream bad_hash(tampered.dump() + body);
  EXPECT_THROW(load_checkpoint(bad_hash), SchemaError);
}

Scene giraffe_scene() {
  Scene s{640, 480, {}};
  const SceneSpec spec;
  AppearanceModel appearance(spec);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 4; ++i) {
    Region r;
    r.id = 10 + i;
    r.category = "giraffe";
    r.box = {20.0 + 150 * i, 100.0 + 30 * i, 100, 200};
    r.appearance = appearance.sample(r.category, r.attrs, rng);
    s.regions.push_back(r);
  }
  return s;
}

TEST(AttentionIo, AllGiraffeSceneHasNoInterEdges) {
  const Vocabulary vocab = world_vocabulary(SceneSpec{});
  Model model(small_config(), vocab.size());
  const Scene scene = giraffe_scene();
  const ObjectGraph g = build_graph(scene, 3);
  const std::vector<std::string> words{"the", "leftmost", "giraffe"};
  const Prediction p = predict(model, g, to_expression(words, vocab));
  const Json dump = attention_dump(scene, g, words, p, Variant::kLgrans, 10);
  EXPECT_TRUE(dump["inter_edges"].empty());
  EXPECT_TRUE(dump["graph"]["inter_edges"].empty());
  EXPECT_EQ(dump["intra_edges"].size(), g.intra_edges.size());
  EXPECT_FALSE(dump["intra_edges"].empty());
  const std::string svg = attention_svg(scene, g, words, p, 10);
  EXPECT_EQ(svg.find("class=\"inter\""), std::string::npos);
  EXPECT_NE(svg.find("class=\"intra\""), std::string::npos);
  EXPECT_EQ(svg, attention_svg(scene, g, words, p, 10));
}

TEST(AttentionIo, DumpValuesAreExact) {
  const Vocabulary vocab = world_vocabulary(SceneSpec{});
  Model model(small_config(), vocab.size());
  for (const auto& d : small_dataset(20, 3)) {
    const ObjectGraph g = build_graph(d.scene, 3);
    const Prediction p = predict(model, g, to_expression(d.expressions[0].tokens, vocab));
    const Json back = Json::parse(attention_dump(d.scene, g, d.expressions[0].tokens, p, Variant::kLgrans,
                                                 d.expressions[0].referent_id)
                                      .dump());
    EXPECT_EQ(back["token_attention"]["intra"].get<std::vector<double>>(), p.attention.token_attention[kIntra]);
    EXPECT_EQ(back["component_weights"]["inter"].get<double>(), p.attention.component_weights[kInter]);
    for (std::size_t i = 0; i < g.node_count; ++i) EXPECT_EQ(back["nodes"][i]["attention"].get<double>(), p.attention.node[i]);
    for (std::size_t e = 0; e < g.inter_edges.size(); ++e) {
      EXPECT_EQ(back["inter_edges"][e]["value"].get<double>(), p.attention.inter[e]);
    }
    EXPECT_EQ(back["scores"]["prob"].get<std::vector<double>>(), p.match.prob);
    EXPECT_EQ(back["prediction"]["region_id"].get<int>(), p.region_id);
  }
}

TEST(AttentionIo, UnattendedVariantsOmitDistributions) {
  const Vocabulary vocab = world_vocabulary(SceneSpec{});
  Model model(small_config(Variant::kGraphRep), vocab.size());
  const auto d = small_dataset(1)[0];
  const ObjectGraph g = build_graph(d.scene, 3);
  const Prediction p = predict(model, g, to_expression(d.expressions[0].tokens, vocab));
  const Json dump = attention_dump(d.scene, g, d.expressions[0].tokens, p, Variant::kGraphRep, std::nullopt);
  EXPECT_TRUE(dump["nodes"][0]["attention"].is_null());
  EXPECT_TRUE(dump["intra_edges"].empty());
  EXPECT_TRUE(dump["referent_id"].is_null());
}

TEST(ConfigIo, ShippedConfigFilesParse) {
  const std::filesystem::path dir = std::filesystem::path(LGRAN_SOURCE_DIR) / "configs";
  EXPECT_EQ(train_config_from_json(read_json_file(dir / "desk.json")).model.dims.embed, 64u);
  EXPECT_EQ(train_config_from_json(read_json_file(dir / "memorize.json")).iterations, 2000u);
  EXPECT_EQ(policy_from_json(read_json_file(dir / "subject_only_policy.json")).relational_fraction, 0.0);
  const ExpressionPolicy all = policy_from_json(read_json_file(dir / "all_relations_policy.json"));
  EXPECT_NO_THROW(validate(all));
  EXPECT_EQ(all.intra_weights.at(IntraRelation::kLeftmost), 1.0);
}

}  // namespace
}  // namespace lgran
