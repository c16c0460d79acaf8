#include <gtest/gtest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "avfuse/avfuse.h"

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

class SmallExperiment : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(avf_experiment_create(&exp_), AVF_OK);
    for (const char* o : {"corpus.samples=40", "train.steps=6", "run.replicates=1", "model.decoder_layers=1",
                          "model.encoder_layers=1"}) {
      ASSERT_EQ(avf_experiment_override(exp_, o), AVF_OK) << avf_last_error();
    }
  }
  void TearDown() override { avf_experiment_free(exp_); }

  avf_experiment* exp_ = nullptr;
};

TEST(CApi, StatusNamesAndVersion) {
  EXPECT_STREQ(avf_status_name(AVF_OK), "ok");
  EXPECT_STREQ(avf_status_name(AVF_ERR_IO), "io error");
  EXPECT_STRNE(avf_version(), "");
}

TEST(CApi, NullArgumentsRejected) {
  EXPECT_EQ(avf_experiment_create(nullptr), AVF_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(avf_experiment_load(nullptr, nullptr), AVF_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(avf_train(nullptr, nullptr, "x", nullptr), AVF_ERR_INVALID_ARGUMENT);
  EXPECT_STRNE(avf_last_error(), "");
  avf_experiment_free(nullptr);
  avf_model_free(nullptr);
  avf_string_free(nullptr);
}

TEST(CApi, ErrorKindsMapToStatusCodes) {
  avf_experiment* exp = nullptr;
  EXPECT_EQ(avf_experiment_load("/nonexistent/avfuse.ini", &exp), AVF_ERR_IO);
  ASSERT_EQ(avf_experiment_create(&exp), AVF_OK);
  EXPECT_EQ(avf_experiment_override(exp, "nosuch.key=1"), AVF_ERR_CONFIG);
  EXPECT_NE(std::string(avf_last_error()).find("nosuch.key"), std::string::npos);
  EXPECT_EQ(avf_experiment_override(exp, "not an assignment"), AVF_ERR_CONFIG);
  avf_model* model = nullptr;
  EXPECT_EQ(avf_model_load("/nonexistent/model.ckpt", &model), AVF_ERR_IO);
  avf_experiment_free(exp);
}

TEST(CApi, RejectedOverrideLeavesExperimentUnchanged) {
  avf_experiment* exp = nullptr;
  ASSERT_EQ(avf_experiment_create(&exp), AVF_OK);
  char* before = nullptr;
  ASSERT_EQ(avf_experiment_echo(exp, &before), AVF_OK);
  EXPECT_EQ(avf_experiment_override(exp, "train.steps=many"), AVF_ERR_CONFIG);
  char* after = nullptr;
  ASSERT_EQ(avf_experiment_echo(exp, &after), AVF_OK);
  EXPECT_STREQ(before, after);
  avf_string_free(before);
  avf_string_free(after);
  avf_experiment_free(exp);
}

TEST(CApi, EchoLoadsBackIdentically) {
  TempDir dir("avfuse_capi_echo");
  fs::create_directories(dir.path);
  avf_experiment* exp = nullptr;
  ASSERT_EQ(avf_experiment_create(&exp), AVF_OK);
  ASSERT_EQ(avf_experiment_override(exp, "run.seed=17"), AVF_OK);
  char* echo = nullptr;
  ASSERT_EQ(avf_experiment_echo(exp, &echo), AVF_OK);
  std::ofstream(dir.str("c.ini")) << echo;
  avf_experiment* loaded = nullptr;
  ASSERT_EQ(avf_experiment_load(dir.str("c.ini").c_str(), &loaded), AVF_OK) << avf_last_error();
  char* echo2 = nullptr;
  ASSERT_EQ(avf_experiment_echo(loaded, &echo2), AVF_OK);
  EXPECT_STREQ(echo, echo2);
  EXPECT_NE(std::string(echo).find("seed = 17"), std::string::npos);
  avf_string_free(echo);
  avf_string_free(echo2);
  avf_experiment_free(exp);
  avf_experiment_free(loaded);
}

TEST_F(SmallExperiment, GenDataTrainEvalDecode) {
  TempDir dir("avfuse_capi_run");
  ASSERT_EQ(avf_gen_data(exp_, dir.str("data").c_str()), AVF_OK) << avf_last_error();
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "config.ini"}) {
    EXPECT_TRUE(fs::exists(dir.path / "data" / f)) << f;
  }

  std::vector<std::string> lines;
  avf_experiment_set_progress(
      exp_, [](const char* m, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(m); }, &lines);
  double rate = -1.0;
  ASSERT_EQ(avf_train(exp_, dir.str("data").c_str(), dir.str("run").c_str(), &rate), AVF_OK) << avf_last_error();
  EXPECT_GE(rate, 0.0);
  EXPECT_FALSE(lines.empty());
  for (const char* f : {"train.jsonl", "eval.jsonl", "model.ckpt", "config.ini"}) {
    EXPECT_TRUE(fs::exists(dir.path / "run" / f)) << f;
  }
  EXPECT_NE(read_file(dir.path / "run" / "train.jsonl").find("\"loss\""), std::string::npos);

  double eval_rate = -1.0;
  ASSERT_EQ(avf_eval(exp_, dir.str("run/model.ckpt").c_str(), dir.str("data").c_str(), dir.str("eval").c_str(),
                     &eval_rate),
            AVF_OK)
      << avf_last_error();
  EXPECT_EQ(eval_rate, rate);

  avf_model* model = nullptr;
  ASSERT_EQ(avf_model_load(dir.str("run/model.ckpt").c_str(), &model), AVF_OK) << avf_last_error();
  char* info = nullptr;
  ASSERT_EQ(avf_model_info(model, &info), AVF_OK);
  const auto j = nlohmann::json::parse(info);
  avf_string_free(info);
  EXPECT_GT(j.at("parameters").get<std::size_t>(), 0u);
  const std::size_t aw = j.at("config").at("audio_input_width");
  const std::size_t vw = j.at("config").at("visual_input_width");

  const std::vector<double> audio(8 * aw, 0.1);
  const std::vector<double> visual(2 * vw, 0.2);
  std::vector<int32_t> ids(32, -1);
  size_t count = 0;
  ASSERT_EQ(avf_model_decode(model, audio.data(), 8, aw, visual.data(), 2, vw, 10, ids.data(), ids.size(), &count),
            AVF_OK)
      << avf_last_error();
  EXPECT_LE(count, 10u);
  std::vector<int32_t> again(32, -1);
  size_t count2 = 0;
  EXPECT_EQ(avf_model_decode(model, audio.data(), 8, aw, visual.data(), 2, vw, 10, nullptr, 1, &count2),
            AVF_ERR_INVALID_ARGUMENT);
  ASSERT_EQ(avf_model_decode(model, audio.data(), 8, aw, visual.data(), 2, vw, 10, nullptr, 0, &count2), AVF_OK);
  EXPECT_EQ(count2, count);
  ASSERT_EQ(avf_model_decode(model, audio.data(), 8, aw, visual.data(), 2, vw, 10, again.data(), 1, &count2),
            AVF_OK);
  EXPECT_EQ(count2, count);
  if (count > 0) EXPECT_EQ(again[0], ids[0]);
  const std::vector<double> wide(8 * (aw + 1), 0.1);
  EXPECT_EQ(avf_model_decode(model, wide.data(), 8, aw + 1, visual.data(), 2, vw, 10, ids.data(), ids.size(),
                             &count),
            AVF_ERR_DIMENSION);
  avf_model_free(model);
}

TEST_F(SmallExperiment, TrainIsDeterministic) {
  TempDir a("avfuse_capi_det_a");
  TempDir b("avfuse_capi_det_b");
  double ra = -1.0, rb = -2.0;
  ASSERT_EQ(avf_train(exp_, nullptr, a.str().c_str(), &ra), AVF_OK) << avf_last_error();
  ASSERT_EQ(avf_train(exp_, nullptr, b.str().c_str(), &rb), AVF_OK) << avf_last_error();
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(read_file(a.path / "train.jsonl"), read_file(b.path / "train.jsonl"));
}

TEST_F(SmallExperiment, DataDirWithWrongWidthsRejected) {
  TempDir dir("avfuse_capi_width");
  ASSERT_EQ(avf_gen_data(exp_, dir.str().c_str()), AVF_OK);
  avf_experiment* other = nullptr;
  ASSERT_EQ(avf_experiment_create(&other), AVF_OK);
  ASSERT_EQ(avf_experiment_override(other, "task.audio_width=5"), AVF_OK) << avf_last_error();
  EXPECT_EQ(avf_train(other, dir.str().c_str(), dir.str("run").c_str(), nullptr), AVF_ERR_VALIDATION);
  avf_experiment_free(other);
}

}  // namespace
