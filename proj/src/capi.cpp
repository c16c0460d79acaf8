#include "avfuse/avfuse.h"

#include <json.hpp>

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "avfuse/commands.hpp"
#include "avfuse/error.hpp"

struct avf_experiment {
  avf::ExperimentConfig cfg;
  avf::Config raw;
  avf_progress_fn progress = nullptr;
  void* progress_user = nullptr;

  avf::ProgressFn progress_fn() const {
    if (progress == nullptr) return {};
    return [fn = progress, user = progress_user](const std::string& msg) { fn(msg.c_str(), user); };
  }
};

struct avf_model {
  avf::Model model;
};

namespace {

thread_local std::string last_error;

avf_status status_for(avf::ErrorKind kind) {
  switch (kind) {
    case avf::ErrorKind::kConfig: return AVF_ERR_CONFIG;
    case avf::ErrorKind::kDimension: return AVF_ERR_DIMENSION;
    case avf::ErrorKind::kNumeric: return AVF_ERR_NUMERIC;
    case avf::ErrorKind::kIndex: return AVF_ERR_INDEX;
    case avf::ErrorKind::kContract: return AVF_ERR_CONTRACT;
    case avf::ErrorKind::kValidation: return AVF_ERR_VALIDATION;
    case avf::ErrorKind::kParse: return AVF_ERR_PARSE;
    case avf::ErrorKind::kIo: return AVF_ERR_IO;
  }
  return AVF_ERR_INTERNAL;
}

avf_status fail(avf_status status, std::string message) {
  last_error = std::move(message);
  return status;
}

template <typename Fn>
avf_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    return fn();
  } catch (const avf::Error& e) {
    return fail(status_for(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(AVF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(AVF_ERR_INTERNAL, e.what());
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string opt(const char* s) { return s == nullptr ? std::string() : std::string(s); }

}  // namespace

extern "C" {

const char* avf_version(void) { return "0.1.0"; }

const char* avf_status_name(avf_status status) {
  switch (status) {
    case AVF_OK: return "ok";
    case AVF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case AVF_ERR_CONFIG: return "config error";
    case AVF_ERR_DIMENSION: return "dimension error";
    case AVF_ERR_NUMERIC: return "numeric error";
    case AVF_ERR_INDEX: return "index error";
    case AVF_ERR_CONTRACT: return "contract error";
    case AVF_ERR_VALIDATION: return "validation error";
    case AVF_ERR_PARSE: return "parse error";
    case AVF_ERR_IO: return "io error";
    case AVF_ERR_CHECK_FAILED: return "check failed";
    case AVF_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* avf_last_error(void) { return last_error.c_str(); }

void avf_string_free(char* s) { std::free(s); }

avf_status avf_experiment_create(avf_experiment** out) {
  if (out == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null output handle");
  return guarded([&] {
    *out = new avf_experiment{avf::default_experiment(), {}, nullptr, nullptr};
    return AVF_OK;
  });
}

avf_status avf_experiment_load(const char* path, avf_experiment** out) {
  if (path == nullptr || out == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    avf::Config raw = avf::Config::load(path);
    avf::ExperimentConfig cfg = avf::experiment_from_config(raw);
    *out = new avf_experiment{std::move(cfg), std::move(raw), nullptr, nullptr};
    return AVF_OK;
  });
}

avf_status avf_experiment_override(avf_experiment* exp, const char* assignment) {
  if (exp == nullptr || assignment == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    avf::Config next = exp->raw;
    next.apply_override(assignment);
    exp->cfg = avf::experiment_from_config(next);
    exp->raw = std::move(next);
    return AVF_OK;
  });
}

avf_status avf_experiment_echo(const avf_experiment* exp, char** out_text) {
  if (exp == nullptr || out_text == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    *out_text = copy_string(avf::config_echo(exp->cfg));
    return AVF_OK;
  });
}

avf_status avf_experiment_set_progress(avf_experiment* exp, avf_progress_fn fn, void* user) {
  if (exp == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null experiment");
  exp->progress = fn;
  exp->progress_user = user;
  return AVF_OK;
}

void avf_experiment_free(avf_experiment* exp) { delete exp; }

avf_status avf_gen_data(const avf_experiment* exp, const char* out_dir) {
  if (exp == nullptr || out_dir == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    avf::command_gen_data(exp->cfg, out_dir);
    return AVF_OK;
  });
}

avf_status avf_train(const avf_experiment* exp, const char* data_dir, const char* out_dir, double* out_rate) {
  if (exp == nullptr || out_dir == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const auto outcome = avf::command_train(exp->cfg, opt(data_dir), out_dir, exp->progress_fn());
    if (out_rate != nullptr) *out_rate = outcome.rate;
    return AVF_OK;
  });
}

avf_status avf_eval(const avf_experiment* exp, const char* checkpoint, const char* data_dir,
                    const char* out_dir, double* out_rate) {
  if (exp == nullptr || checkpoint == nullptr || out_dir == nullptr) {
    return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guarded([&] {
    const auto report = avf::command_eval(exp->cfg, checkpoint, opt(data_dir), out_dir);
    if (out_rate != nullptr) *out_rate = report.rate;
    return AVF_OK;
  });
}

avf_status avf_distill(const avf_experiment* exp, const char* out_dir, char** out_table) {
  if (exp == nullptr || out_dir == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const auto outcome = avf::command_distill(exp->cfg, out_dir, exp->progress_fn());
    if (out_table != nullptr) *out_table = copy_string(avf::table_text(outcome.table));
    return AVF_OK;
  });
}

avf_status avf_compare_fusion(const avf_experiment* exp, const char* data_dir, const char* out_dir,
                              char** out_table) {
  if (exp == nullptr || out_dir == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const auto table = avf::command_compare_fusion(exp->cfg, opt(data_dir), out_dir, exp->progress_fn());
    if (out_table != nullptr) *out_table = copy_string(avf::table_text(table));
    return AVF_OK;
  });
}

avf_status avf_sweep_window(const avf_experiment* exp, const char* data_dir, const char* out_dir,
                            char** out_table) {
  if (exp == nullptr || out_dir == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const auto table = avf::command_sweep_window(exp->cfg, opt(data_dir), out_dir, exp->progress_fn());
    if (out_table != nullptr) *out_table = copy_string(avf::table_text(table));
    return AVF_OK;
  });
}

avf_status avf_gradcheck(uint64_t seed, const char* out_dir, char** out_report) {
  return guarded([&] {
    const auto entries = avf::command_gradcheck(seed, opt(out_dir));
    if (out_report != nullptr) *out_report = copy_string(avf::gradient_suite_report(entries));
    for (const auto& e : entries) {
      if (!e.passed()) return fail(AVF_ERR_CHECK_FAILED, "gradient check failed for " + e.name);
    }
    return AVF_OK;
  });
}

avf_status avf_model_load(const char* path, avf_model** out) {
  if (path == nullptr || out == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    *out = new avf_model{std::move(avf::load_checkpoint(path).model)};
    return AVF_OK;
  });
}

avf_status avf_model_info(const avf_model* model, char** out_json) {
  if (model == nullptr || out_json == nullptr) return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const nlohmann::json j = {{"config", nlohmann::json::parse(avf::model_config_to_json(model->model.config()))},
                              {"parameters", model->model.parameter_count()},
                              {"seed", model->model.seed()}};
    *out_json = copy_string(j.dump());
    return AVF_OK;
  });
}

avf_status avf_model_decode(const avf_model* model, const double* audio, size_t frames, size_t audio_width,
                            const double* visual, size_t visual_rows, size_t visual_width, size_t max_len,
                            int32_t* out_tokens, size_t capacity, size_t* out_count) {
  if (model == nullptr || audio == nullptr || out_count == nullptr || (capacity > 0 && out_tokens == nullptr)) {
    return fail(AVF_ERR_INVALID_ARGUMENT, "null argument");
  }
  return guarded([&] {
    avf::ModelInput in;
    in.audio = avf::Tensor::from({frames, audio_width}, std::vector<double>(audio, audio + frames * audio_width));
    if (visual != nullptr) {
      in.visual = avf::Tensor::from({visual_rows, visual_width},
                                    std::vector<double>(visual, visual + visual_rows * visual_width));
    }
    const std::vector<int> ids = model->model.greedy_decode(in, max_len);
    for (size_t i = 0; i < ids.size() && i < capacity; ++i) out_tokens[i] = ids[i];
    *out_count = ids.size();
    return AVF_OK;
  });
}

void avf_model_free(avf_model* model) { delete model; }

}  // extern "C"
