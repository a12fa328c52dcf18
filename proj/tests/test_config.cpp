#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mbc/config.hpp"

using namespace mbc;

TEST_CASE("defaults") {
  RunConfig c;
  CHECK(c.train.learning_rate == 1e-5);
  CHECK(c.train.beta_commit == 0.25);
  CHECK(c.train.lambda_vq == 1.0);
  CHECK(c.train.usage_decay == 0.99);
  CHECK(c.train.reset_threshold == 1e-4);
  CHECK(c.train.backprop_dropout == 0.75);
  CHECK(c.train.num_codes == 512);
  CHECK(c.model.tokens == 12);
  CHECK(c.model.aggregator_blocks == 4);
  CHECK(c.model.lora_dropout == 0.05);
  CHECK(c.adapt.group_size == 64);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("json round trip and overrides") {
  auto c = config_from_json(nlohmann::json::parse(R"({"seed": 3, "train": {"epochs": 7, "lambda_vq": 0.0},
                                                       "model": {"dim": 16}})"));
  CHECK(c.seed == 3);
  CHECK(c.train.epochs == 7);
  CHECK(c.train.lambda_vq == 0.0);
  CHECK(c.model.dim == 16);
  CHECK(c.train.batch_size == 8);
  auto again = config_from_json(config_to_json(c));
  CHECK(canonical_config(again) == canonical_config(c));
  CHECK(config_to_json(c)["model"]["dim"] == 16);
}

TEST_CASE("config errors name the key") {
  CHECK_THROWS_WITH(config_from_json(nlohmann::json::parse(R"({"train": {"epoch": 3}})")),
                    doctest::Contains("train.epoch"));
  CHECK_THROWS_WITH(config_from_json(nlohmann::json::parse(R"({"model": {"dim": -1}})")),
                    doctest::Contains("model.dim"));
  CHECK_THROWS_WITH(config_from_json(nlohmann::json::parse(R"({"train": {"reset_enabled": 1}})")),
                    doctest::Contains("train.reset_enabled"));
  CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"train": {"backprop_dropout": 1.0}})")));
  CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"train": {"codebook_init": "kmeans"}})")));
  CHECK_THROWS(config_from_json(nlohmann::json::parse(R"({"model": {"dim": 10, "encoder_heads": 4}})")));
  CHECK_THROWS(config_from_json(nlohmann::json::parse("[1, 2]")));

  const auto path = std::filesystem::temp_directory_path() / "mbc_test_config.json";
  {
    std::ofstream f(path);
    f << "{\"seed\": 5,";
  }
  CHECK_THROWS_WITH(load_config(path), doctest::Contains(path.string().c_str()));
  {
    std::ofstream f(path);
    f << "{\"seed\": 5}";
  }
  CHECK(load_config(path).seed == 5);
  std::filesystem::remove(path);
  CHECK_THROWS(load_config(path));
}
