#include <selftune/experiment.hpp>

#include <gtest/gtest.h>

using namespace selftune;

namespace {

ExperimentConfig unusual_config() {
  ExperimentConfig c;
  c.train.method = Method::contrastive_cl;
  c.train.temperature = 0.13;
  c.train.keys_per_category = 5;
  c.train.projector_dim = 17;
  c.train.base_lr = 0.0123456789;
  c.train.key_momentum.reset();
  c.train.seed = 123456789012345ULL;
  c.train.threshold = 0.3;
  c.train.separate_queues = true;
  c.train.query_augmentation = AugmentationPolicy{AugmentationKind::coordinate_dropout, 0.2};
  c.dataset.kind = "blob_images";
  c.dataset.side = 6;
  c.dataset.labels_per_class = 3;
  c.pretrain.enabled = true;
  c.pretrain.epochs = 4;
  c.output_dir = "out/x";
  c.seeds = {9, 4};
  return c;
}

std::string error_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_experiment(text, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Experiment, DefaultsRoundTrip) {
  const ExperimentConfig c;
  EXPECT_EQ(experiment_from_json(to_json(c)), c);
}

TEST(Experiment, NonDefaultRoundTrip) {
  const ExperimentConfig c = unusual_config();
  c.validate();
  const Json j = to_json(c);
  EXPECT_EQ(experiment_from_json(j), c);
  EXPECT_EQ(to_json(experiment_from_json(j)), j);
  // through text as well
  EXPECT_EQ(parse_experiment(j.dump()), c);
  EXPECT_TRUE(j["key_momentum"].is_null());
}

TEST(Experiment, ParseSerializeParseIsIdentity) {
  const std::string text = R"({"method":"pseudo_label_ce","epochs":7,"dataset":{"dim":5,"separation":2.5},"seeds":[3]})";
  const ExperimentConfig a = parse_experiment(text);
  EXPECT_EQ(a.train.method, Method::pseudo_label_ce);
  EXPECT_EQ(a.train.epochs, 7);
  EXPECT_EQ(a.dataset.dim, 5);
  EXPECT_EQ(a.seeds, std::vector<std::uint64_t>{3});
  EXPECT_EQ(parse_experiment(to_json(a).dump()), a);
}

TEST(Experiment, MissingKeysKeepDefaults) { EXPECT_EQ(parse_experiment("{}"), ExperimentConfig{}); }

TEST(Experiment, UnknownKeysAreNamed) {
  EXPECT_NE(error_of(R"({"lerning_rate":0.1})").find("'lerning_rate'"), std::string::npos);
  EXPECT_NE(error_of(R"({"dataset":{"sepration":1}})").find("'dataset.sepration'"), std::string::npos);
  EXPECT_NE(error_of(R"({"pretrain":{"on":true}})").find("'pretrain.on'"), std::string::npos);
  EXPECT_NE(error_of(R"({"query_augmentation":{"kind":"noise","amount":1}})").find("'query_augmentation.amount'"),
            std::string::npos);
}

TEST(Experiment, TypeErrorsAreNamed) {
  EXPECT_NE(error_of(R"({"epochs":"ten"})").find("field 'epochs'"), std::string::npos);
  EXPECT_NE(error_of(R"({"epochs":2.5})").find("field 'epochs'"), std::string::npos);
  EXPECT_NE(error_of(R"({"seed":-1})").find("field 'seed'"), std::string::npos);
  EXPECT_NE(error_of(R"({"separate_queues":1})").find("field 'separate_queues'"), std::string::npos);
  EXPECT_NE(error_of(R"({"seeds":[1,"two"]})").find("field 'seeds'"), std::string::npos);
  EXPECT_NE(error_of(R"({"method":"magic"})").find("field 'method'"), std::string::npos);
  EXPECT_NE(error_of(R"({"key_augmentation":{"kind":"warp"}})").find("field 'key_augmentation.kind'"),
            std::string::npos);
  EXPECT_NE(error_of("{not json").find("not valid JSON"), std::string::npos);
}

TEST(Experiment, ValidationErrors) {
  EXPECT_NE(error_of(R"({"keys_per_category":0})"), "");
  EXPECT_NE(error_of(R"({"temperature":0})"), "");
  EXPECT_NE(error_of(R"({"dataset":{"kind":"parquet"}})").find("dataset.kind"), std::string::npos);
  EXPECT_NE(error_of(R"({"dataset":{"kind":"csv"}})").find("dataset.path"), std::string::npos);
  EXPECT_NE(error_of(R"({"dataset":{"test_fraction":1.0}})").find("dataset.test_fraction"), std::string::npos);
  EXPECT_NE(error_of(R"({"seeds":[]})").find("seeds"), std::string::npos);
  EXPECT_NE(error_of(R"({"output_dir":""})").find("output_dir"), std::string::npos);
}

TEST(Experiment, NullKeyMomentumDisablesMomentum) {
  EXPECT_FALSE(parse_experiment(R"({"key_momentum":null})").train.key_momentum.has_value());
  EXPECT_DOUBLE_EQ(*parse_experiment(R"({"key_momentum":0.5})").train.key_momentum, 0.5);
}

TEST(Experiment, DottedOverrides) {
  const auto c = parse_experiment(R"({"epochs":3})", {"epochs=9", "dataset.dim=7", "method=contrastive_cl",
                                                      "key_momentum=null", "query_augmentation.strength=0.4",
                                                      "pretrain.enabled=true", "seeds=[5,6]"});
  EXPECT_EQ(c.train.epochs, 9);
  EXPECT_EQ(c.dataset.dim, 7);
  EXPECT_EQ(c.train.method, Method::contrastive_cl);
  EXPECT_FALSE(c.train.key_momentum.has_value());
  EXPECT_DOUBLE_EQ(c.train.query_augmentation.strength, 0.4);
  EXPECT_TRUE(c.pretrain.enabled);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{5, 6}));
}

TEST(Experiment, BadOverrides) {
  EXPECT_NE(error_of("{}", {"epochs"}).find("KEY=VALUE"), std::string::npos);
  EXPECT_NE(error_of("{}", {"=3"}).find("KEY=VALUE"), std::string::npos);
  EXPECT_NE(error_of(R"({"epochs":3})", {"epochs.x=3"}).find("non-object"), std::string::npos);
  EXPECT_NE(error_of("{}", {"dataset..dim=3"}).find("empty component"), std::string::npos);
  EXPECT_NE(error_of("{}", {"dataset.bogus=3"}).find("'dataset.bogus'"), std::string::npos);
}

TEST(Experiment, MissingFile) { EXPECT_THROW(load_experiment("/nonexistent/config.json"), ConfigError); }

TEST(Experiment, SplitFollowsSeedAndSpec) {
  ExperimentConfig c;
  c.dataset.num_categories = 3;
  c.dataset.dim = 4;
  c.dataset.per_class = 10;
  const Split a = make_split(c, 5), b = make_split(c, 5), other = make_split(c, 6);
  EXPECT_EQ(a.labeled.inputs, b.labeled.inputs);
  EXPECT_EQ(a.test.labels, b.test.labels);
  EXPECT_NE(a.unlabeled.inputs, other.unlabeled.inputs);
  EXPECT_EQ(a.labeled.size() + a.unlabeled.size() + a.test.size(), 30u);
}

TEST(Experiment, BlobImagesAndPretrainSources) {
  ExperimentConfig c;
  c.dataset.kind = "blob_images";
  c.dataset.num_categories = 2;
  c.dataset.per_class = 5;
  c.dataset.side = 6;
  const Dataset d = load_dataset(c.dataset, 1);
  EXPECT_EQ(d.shape.channels, 1);
  EXPECT_EQ(d.shape.height, 6);
  EXPECT_FALSE(static_cast<bool>(pretrain_source_fn(c)));
  c.pretrain.enabled = true;
  c.pretrain.source_categories = 4;
  c.pretrain.per_class = 3;
  const Dataset src = pretrain_source(c, 1);
  EXPECT_EQ(src.size(), 12u);
  EXPECT_TRUE(static_cast<bool>(pretrain_source_fn(c)));
}
