#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "avfuse/avfuse.h"

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::uint64_t seed = 1;
  bool quiet = false;
};

int report_failure(const char* what, avf_status status) {
  std::fprintf(stderr, "avfuse: %s failed (%s): %s\n", what, avf_status_name(status), avf_last_error());
  return status == AVF_ERR_CHECK_FAILED ? 2 : 1;
}

void print_progress(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

void print_owned(char* text) {
  if (text == nullptr) return;
  std::fputs(text, stdout);
  avf_string_free(text);
}

class Experiment {
 public:
  ~Experiment() { avf_experiment_free(handle_); }

  avf_status open(const Options& o) {
    avf_status s = o.config.empty() ? avf_experiment_create(&handle_) : avf_experiment_load(o.config.c_str(), &handle_);
    if (s != AVF_OK) return s;
    for (const auto& assignment : o.overrides) {
      s = avf_experiment_override(handle_, assignment.c_str());
      if (s != AVF_OK) return s;
    }
    if (!o.quiet) avf_experiment_set_progress(handle_, print_progress, nullptr);
    return AVF_OK;
  }

  avf_experiment* get() const { return handle_; }

 private:
  avf_experiment* handle_ = nullptr;
};

void add_config_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "configuration file ([section] key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "override section.key=value (repeatable, last wins)");
  cmd->add_flag("--quiet", o.quiet, "suppress progress lines");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avfuse: windowed audio-visual fusion experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(avf_version()));
  Options o;

  auto* gen = app.add_subcommand("gen-data", "write train/dev/test manifests of the synthetic corpus");
  add_config_options(gen, o);
  gen->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train the configured model and score the test split");
  add_config_options(train, o);
  train->add_option("--data", o.data, "manifest directory (default: generate from config)");
  train->add_option("--out", o.out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
  add_config_options(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", o.data, "manifest directory (default: generate from config)");
  eval->add_option("--out", o.out, "output directory")->required();

  auto* distill = app.add_subcommand("distill", "teacher, pseudo-label and distilled students");
  add_config_options(distill, o);
  distill->add_option("--out", o.out, "output directory")->required();

  auto* compare = app.add_subcommand("compare-fusion", "train every fusion variant over the replicates");
  add_config_options(compare, o);
  compare->add_option("--data", o.data, "manifest directory (default: generate from config)");
  compare->add_option("--out", o.out, "output directory")->required();

  auto* sweep = app.add_subcommand("sweep-window", "train the windowed fusion over the window sizes");
  add_config_options(sweep, o);
  sweep->add_option("--data", o.data, "manifest directory (default: generate from config)");
  sweep->add_option("--out", o.out, "output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer and the composed models");
  grad->add_option("--seed", o.seed, "seed for the random inputs");
  grad->add_option("--out", o.out, "output directory");
  grad->add_flag("--quiet", o.quiet, "suppress the report");

  auto* echo = app.add_subcommand("config", "print the resolved configuration");
  add_config_options(echo, o);

  CLI11_PARSE(app, argc, argv);

  if (grad->parsed()) {
    char* text = nullptr;
    const avf_status s = avf_gradcheck(o.seed, o.out.empty() ? nullptr : o.out.c_str(), &text);
    if (o.quiet) {
      avf_string_free(text);
    } else {
      print_owned(text);
    }
    return s == AVF_OK ? 0 : report_failure("gradcheck", s);
  }

  Experiment exp;
  if (const avf_status s = exp.open(o); s != AVF_OK) return report_failure("configuration", s);
  const char* data = o.data.empty() ? nullptr : o.data.c_str();
  char* text = nullptr;
  double rate = 0.0;
  avf_status s = AVF_OK;
  const char* what = "";

  if (echo->parsed()) {
    what = "config";
    s = avf_experiment_echo(exp.get(), &text);
  } else if (gen->parsed()) {
    what = "gen-data";
    s = avf_gen_data(exp.get(), o.out.c_str());
  } else if (train->parsed()) {
    what = "train";
    s = avf_train(exp.get(), data, o.out.c_str(), &rate);
    if (s == AVF_OK) std::printf("test error rate %.6f\n", rate);
  } else if (eval->parsed()) {
    what = "eval";
    s = avf_eval(exp.get(), o.checkpoint.c_str(), data, o.out.c_str(), &rate);
    if (s == AVF_OK) std::printf("test error rate %.6f\n", rate);
  } else if (distill->parsed()) {
    what = "distill";
    s = avf_distill(exp.get(), o.out.c_str(), &text);
  } else if (compare->parsed()) {
    what = "compare-fusion";
    s = avf_compare_fusion(exp.get(), data, o.out.c_str(), &text);
  } else if (sweep->parsed()) {
    what = "sweep-window";
    s = avf_sweep_window(exp.get(), data, o.out.c_str(), &text);
  }
  print_owned(text);
  return s == AVF_OK ? 0 : report_failure(what, s);
}
