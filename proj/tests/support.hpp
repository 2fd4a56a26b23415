#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "vbfi/eval.hpp"
#include "vbfi/io.hpp"
#include "vbfi/questionnaire.hpp"
#include "vbfi/vgbdt.hpp"

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("vbfi_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  void write(const std::string& name, const std::string& text) const { vbfi::write_file_atomic(path_ / name, text); }

 private:
  std::filesystem::path path_;
};

// Default synthetic data with one trained model per trait and two designed
// questionnaire versions; built once per test binary.
struct SynthBundle {
  vbfi::SynthData data;
  std::map<vbfi::Trait, vbfi::VgbdtModel> models;
  vbfi::Questionnaire v1;
  vbfi::Questionnaire v2;
};

inline const SynthBundle& synth_bundle() {
  static const SynthBundle bundle = [] {
    SynthBundle b;
    b.data = vbfi::generate_synthetic(vbfi::SynthSpec{});
    for (auto t : vbfi::kAllTraits) b.models[t] = vbfi::train(b.data.views, b.data.labels.at(t), {}, t);
    const auto idx = vbfi::build_index(b.data.dataset);
    b.v1 = vbfi::design_questionnaire(b.models, b.data.dataset, idx, 1, {}, 42);
    b.v2 = vbfi::design_questionnaire(b.models, b.data.dataset, idx, 2, {}, 42);
    return b;
  }();
  return bundle;
}

}  // namespace testing_support
