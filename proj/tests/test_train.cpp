#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "fsf/nn/checkpoint.hpp"
#include "fsf/nn/train.hpp"
#include "fsf/simulate.hpp"

using namespace fsf::nn;

namespace {

ModelConfig toy_model(std::size_t units) {
  ModelConfig c;
  c.channels = 4;
  c.units = units;
  c.input_size = 16;
  c.hidden = 8;
  return c;
}

// Reals vs zero-insert fakes at 16x16, generated in memory.
std::vector<Sample> toy_samples(std::size_t per_class, std::uint64_t seed) {
  std::vector<Sample> s;
  fsf::PipelineConfig cfg;
  cfg.kind = fsf::UpsampleKind::zero_insert;
  cfg.depth = 1;
  cfg.base_height = cfg.base_width = 8;
  for (std::size_t i = 0; i < per_class; ++i) {
    s.push_back({fsf::synth_real(fsf::mix_seed(seed, 2 * i), 16, 16), fsf::Label::real, "real", "r" + std::to_string(i)});
    s.push_back({fsf::generate_fake(fsf::mix_seed(seed, 2 * i + 1), cfg), fsf::Label::generated, "zero_insert",
                 "g" + std::to_string(i)});
  }
  return s;
}

TrainConfig toy_train(std::size_t max_epochs, std::size_t patience) {
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.learning_rate = 3e-3;
  t.val_fraction = 0.2;
  t.seed = 17;
  return t;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  Net model(toy_model(2), 5);
  const auto path = temp_file("fsf_ckpt_a.bin"), again = temp_file("fsf_ckpt_b.bin");
  save_checkpoint(path, model, {7, 17, 0.25});
  const auto loaded = load_checkpoint<float>(path);
  EXPECT_EQ(loaded.meta.epoch, 7u);
  EXPECT_EQ(loaded.meta.seed, 17u);
  EXPECT_EQ(loaded.meta.val_loss, 0.25);
  EXPECT_EQ(loaded.model.config(), model.config());
  const auto a = model.params().named();
  const auto b = loaded.model.params().named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;

  save_checkpoint(again, loaded.model, loaded.meta);
  EXPECT_EQ(read_bytes(path), read_bytes(again));

  const auto samples = toy_samples(3, 1);
  for (const auto& s : samples) {
    const auto x = model_input(s.image, 16);
    EXPECT_EQ(model.forward(x), loaded.model.forward(x));
  }
  std::filesystem::remove(path);
  std::filesystem::remove(again);
}

TEST(Checkpoint, DoubleModelsRoundTripToo) {
  Model<double> model(toy_model(1), 9);
  const auto bytes = serialize_checkpoint(model, {});
  const auto back = deserialize_checkpoint<double>(bytes);
  EXPECT_EQ(serialize_checkpoint(back.model, back.meta), bytes);
}

TEST(Checkpoint, CorruptionIsRejected) {
  Net model(toy_model(1), 3);
  const auto good = serialize_checkpoint(model, {});
  for (std::size_t pos : {std::size_t(20), good.size() / 2, good.size() - 9, good.size() - 1}) {
    auto bad = good;
    bad[pos] ^= 0x10;
    EXPECT_THROW(deserialize_checkpoint<float>(bad), fsf::FormatError) << pos;
  }
  auto truncated = good;
  truncated.resize(good.size() - 100);
  EXPECT_THROW(deserialize_checkpoint<float>(truncated), fsf::FormatError);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint<float>(magic), fsf::FormatError);
}

TEST(Checkpoint, VersionMismatchIsRejected) {
  auto bytes = serialize_checkpoint(Net(toy_model(0), 1), {});
  bytes[8] = 2;  // version field follows the magic
  const std::size_t body = bytes.size() - 8;
  const auto h = fnv1a64(bytes.data(), body);
  for (std::size_t i = 0; i < 8; ++i) bytes[body + i] = static_cast<unsigned char>(h >> (8 * i));
  try {
    deserialize_checkpoint<float>(bytes);
    FAIL() << "version 2 accepted";
  } catch (const fsf::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint<float>(temp_file("fsf_no_such_checkpoint.bin")), fsf::IoError);
}

TEST(Train, ReproducibleAndEarlyStoppingContract) {
  const auto samples = toy_samples(20, 3);
  for (std::size_t patience : {1u, 2u}) {
    const auto tc = toy_train(12, patience);
    const auto a = train(samples, toy_model(1), tc);
    const auto b = train(samples, toy_model(1), tc);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
      EXPECT_EQ(a.history[i].val_loss, b.history[i].val_loss);
    }
    // returned epoch has the minimal validation loss among executed epochs
    const auto best = std::min_element(a.history.begin(), a.history.end(),
                                       [](const auto& x, const auto& y) { return x.val_loss < y.val_loss; });
    EXPECT_EQ(a.best_epoch, best->epoch);
    EXPECT_EQ(a.best_val_loss, best->val_loss);
    // halts exactly `patience` epochs after the last improvement, or at the cap
    if (a.history.size() < tc.max_epochs) {
      EXPECT_EQ(a.history.size(), a.best_epoch + patience);
    }
  }
}

TEST(Train, HaltsAfterPatienceWhenValidationStalls) {
  // A vanishing learning rate leaves the loss flat after the first steps.
  auto tc = toy_train(30, 2);
  tc.learning_rate = 1e-12;
  tc.augment = false;
  const auto r = train(toy_samples(8, 4), toy_model(0), tc);
  EXPECT_LT(r.history.size(), 30u);
  EXPECT_EQ(r.history.size(), r.best_epoch + 2);
}

TEST(Train, SeparableToyIsLearnedPerfectly) {
  auto tc = toy_train(25, 4);
  const auto samples = toy_samples(24, 5);
  const auto r = train(samples, toy_model(1), tc);
  EXPECT_GE(r.train_accuracy, 0.95);
  const auto acc = pipeline_accuracy(predict(r.model, samples, {}));
  EXPECT_GE(acc.at("overall"), 0.95);
}

TEST(Train, SingleClassManifestIsRejected) {
  auto samples = toy_samples(5, 6);
  std::erase_if(samples, [](const Sample& s) { return s.label == fsf::Label::real; });
  EXPECT_THROW(train(samples, toy_model(1), toy_train(2, 1)), fsf::DataError);
}

TEST(Train, InvalidConfigsAreConfigErrors) {
  const auto samples = toy_samples(5, 6);
  auto tc = toy_train(2, 1);
  tc.batch_size = 0;
  EXPECT_THROW(train(samples, toy_model(1), tc), fsf::ConfigError);
  tc = toy_train(2, 1);
  tc.val_fraction = 1.0;
  EXPECT_THROW(train(samples, toy_model(1), tc), fsf::ConfigError);
}

TEST(Evaluate, RandomModelIsNearChance) {
  const auto samples = toy_samples(100, 8);
  double total = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Net model(toy_model(2), seed);
    total += pipeline_accuracy(predict(model, samples, {})).at("overall");
  }
  EXPECT_NEAR(total / 5, 0.5, 0.1);
}

TEST(Evaluate, LogitsIndependentOfOrdering) {
  const Net model(toy_model(1), 4);
  auto samples = toy_samples(6, 9);
  const auto a = predict(model, samples, {});
  std::reverse(samples.begin(), samples.end());
  const auto b = predict(model, samples, {});
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].path, b[a.size() - 1 - i].path);
    EXPECT_EQ(a[i].logit, b[a.size() - 1 - i].logit);
  }
}

TEST(Evaluate, TableShapeAndBalancedAccuracy) {
  std::vector<Prediction> preds = {
      {"a", fsf::Label::real, "real", -1.0},      {"b", fsf::Label::real, "real", 2.0},
      {"c", fsf::Label::generated, "x", 1.0},     {"d", fsf::Label::generated, "x", 1.0},
      {"e", fsf::Label::generated, "y", -1.0},    {"f", fsf::Label::generated, "y", 3.0},
  };
  const auto acc = pipeline_accuracy(preds);
  EXPECT_DOUBLE_EQ(acc.at("real"), 0.5);
  EXPECT_DOUBLE_EQ(acc.at("x"), 0.75);
  EXPECT_DOUBLE_EQ(acc.at("y"), 0.5);
  EXPECT_DOUBLE_EQ(acc.at("overall"), 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(group_accuracy(preds, {"x", "y"}), 0.5 * (0.75 + 0.5));

  const Net model(toy_model(1), 2);
  const auto table = evaluate(model, toy_samples(4, 10), fsf::standard_distortions());
  EXPECT_EQ(table.columns, (std::vector<std::string>{"none", "jpeg95", "down0.5", "blur1"}));
  EXPECT_EQ(table.rows, (std::vector<std::string>{"zero_insert", "real", "overall"}));
  EXPECT_THROW(evaluate(model, {}, fsf::standard_distortions()), fsf::DataError);
}
