#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mil/model.hpp"

namespace mil {

// Synthetic benchmark description. Every modality observes the same latent
// samples through its own random map and nonlinearity, so a paired
// late-fusion test set exists by construction.
struct BenchmarkSpec {
  std::string name = "synthetic-mil";
  int num_classes = 10;
  int num_modalities = 3;
  int train_count = 700;
  int val_count = 100;
  int test_count = 200;
  int latent_dim = 16;
  int seq_len = 8;
  std::vector<int> feature_dims;           // per modality; default width 64
  std::vector<std::string> transforms;     // identity | tanh | abs
  std::vector<std::string> modality_names; // default rgb/flow/audio/m<i>
  double noise_scale = 0.1;
  std::vector<double> noise_scales;        // per modality; overrides noise_scale
  double class_scatter = 0.25;
  std::uint64_t seed = 0;
};

// The frozen desk-scale benchmark: two clean modalities plus a heavily noised
// final modality whose low-signal training phase induces SeqF forgetting.
BenchmarkSpec desk_default_benchmark();

void validate(const BenchmarkSpec& spec);
BenchmarkSpec benchmark_spec_from_json_file(const std::string& path);
BenchmarkSpec benchmark_spec_from_json_text(const std::string& text);
std::string benchmark_spec_to_json(const BenchmarkSpec& spec);

struct Split {
  std::vector<Mat> features;  // each seq_len x raw_dim
  std::vector<int> labels;
  std::vector<int> ids;

  std::size_t size() const { return features.size(); }
};

struct ModalityData {
  int id = 0;
  std::string name;
  int raw_dim = 0;
  int seq_len = 0;
  Split train, val, test;
};

struct Dataset {
  std::string name;
  int num_classes = 0;
  std::vector<ModalityData> modalities;

  const ModalityData* find_modality(const std::string& name_or_id) const;
};

// Generates blobs + manifest under out_dir. Refuses to overwrite an existing
// manifest unless `overwrite`. Returns the manifest path.
std::string generate_benchmark(const BenchmarkSpec& spec,
                               const std::string& out_dir,
                               bool overwrite = false);

// Loads and validates a manifest: blob sizes must match counts exactly,
// labels must be < num_classes, splits disjoint by id within a modality.
Dataset load_manifest(const std::string& manifest_path);

// True when every test id is present in all modalities (enables A_multi).
bool has_paired_test_set(const Dataset& ds);

FeatureSequence feature_at(const ModalityData& mod, const Split& split,
                           std::size_t i);

}  // namespace mil
