#pragma once

#include <cstdint>
#include <string>

namespace mil {

enum class MergeMode { kResidual, kMultiplicative };
enum class ContrastiveForm { kHinge, kAbsolute };

// Model and training hyperparameters. Defaults are desk-scale (CPU-runnable);
// the full-scale values used on real benchmarks are reachable through the
// same fields.
struct ModelConfig {
  int depth = 2;
  int width = 64;
  int heads = 4;
  int num_classes = 10;
  int adapter_rank = 8;
  int num_components = 3;  // K perturbation components

  double lambda_g = 0.6;    // perturbation intensity
  double epsilon = 0.3;     // contrastive margin
  double lambda_con = 0.8;
  double lambda_dis = 0.6;
  double lambda = 1.5;      // alignment weight in the overall objective

  int epochs = 15;
  int batch_size = 64;
  double learning_rate = 5e-4;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;

  bool use_positional = true;
  int max_len = 64;

  MergeMode merge_mode = MergeMode::kResidual;
  ContrastiveForm contrastive_form = ContrastiveForm::kHinge;
  bool fuse_probabilities = false;  // late fusion over probs instead of logits

  // baseline-specific knobs
  double lambda_fullr = 1.0;
  double lambda_ewc = 1.0;
  double lwf_temperature = 2.0;
  double lwf_weight = 1.0;

  int mlp_hidden() const { return 4 * width; }
  int mod_hidden() const { return width / 2; }  // E_mod hidden width
};

// Throws ConfigError naming the offending field.
void validate(const ModelConfig& c);

ModelConfig config_from_json_file(const std::string& path);
ModelConfig config_from_json_text(const std::string& text);
std::string config_to_json(const ModelConfig& c);

}  // namespace mil
