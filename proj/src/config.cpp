#include "mil/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mil/errors.hpp"

namespace mil {

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("invalid config: " + field + " " + why);
  };
  if (c.depth < 1) fail("depth", "must be >= 1");
  if (c.width < 1) fail("width", "must be >= 1");
  if (c.heads < 1) fail("heads", "must be >= 1");
  if (c.width % c.heads != 0) fail("heads", "must divide width");
  if (c.num_classes < 1) fail("num_classes", "must be >= 1");
  if (c.adapter_rank < 1 || c.adapter_rank > c.width) {
    fail("adapter_rank", "must be in [1, width]");
  }
  if (c.num_components < 1) fail("num_components", "must be >= 1");
  if (c.lambda_g < 0) fail("lambda_g", "must be >= 0");
  if (c.epsilon < 0) fail("epsilon", "must be >= 0");
  if (c.lambda < 0) fail("lambda", "must be >= 0");
  if (c.lambda_con < 0) fail("lambda_con", "must be >= 0");
  if (c.lambda_dis < 0) fail("lambda_dis", "must be >= 0");
  if (c.epochs < 1) fail("epochs", "must be >= 1");
  if (c.batch_size < 1) fail("batch_size", "must be >= 1");
  if (c.learning_rate <= 0) fail("learning_rate", "must be > 0");
  if (c.weight_decay < 0) fail("weight_decay", "must be >= 0");
  if (c.max_len < 1) fail("max_len", "must be >= 1");
  if (c.lwf_temperature <= 0) fail("lwf_temperature", "must be > 0");
}

namespace {

using nlohmann::json;

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ModelConfig from_json(const json& j) {
  ModelConfig c;
  maybe(j, "depth", c.depth);
  maybe(j, "width", c.width);
  maybe(j, "heads", c.heads);
  maybe(j, "num_classes", c.num_classes);
  maybe(j, "adapter_rank", c.adapter_rank);
  maybe(j, "num_components", c.num_components);
  maybe(j, "lambda_g", c.lambda_g);
  maybe(j, "epsilon", c.epsilon);
  maybe(j, "lambda_con", c.lambda_con);
  maybe(j, "lambda_dis", c.lambda_dis);
  maybe(j, "lambda", c.lambda);
  maybe(j, "epochs", c.epochs);
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "learning_rate", c.learning_rate);
  maybe(j, "weight_decay", c.weight_decay);
  maybe(j, "seed", c.seed);
  maybe(j, "use_positional", c.use_positional);
  maybe(j, "max_len", c.max_len);
  maybe(j, "lambda_fullr", c.lambda_fullr);
  maybe(j, "lambda_ewc", c.lambda_ewc);
  maybe(j, "lwf_temperature", c.lwf_temperature);
  maybe(j, "lwf_weight", c.lwf_weight);
  maybe(j, "fuse_probabilities", c.fuse_probabilities);
  if (j.contains("merge_mode")) {
    std::string m = j.at("merge_mode").get<std::string>();
    if (m == "residual") {
      c.merge_mode = MergeMode::kResidual;
    } else if (m == "multiplicative") {
      c.merge_mode = MergeMode::kMultiplicative;
    } else {
      throw ConfigError("invalid config: merge_mode must be residual or multiplicative");
    }
  }
  if (j.contains("contrastive_form")) {
    std::string m = j.at("contrastive_form").get<std::string>();
    if (m == "hinge") {
      c.contrastive_form = ContrastiveForm::kHinge;
    } else if (m == "absolute") {
      c.contrastive_form = ContrastiveForm::kAbsolute;
    } else {
      throw ConfigError("invalid config: contrastive_form must be hinge or absolute");
    }
  }
  validate(c);
  return c;
}

}  // namespace

ModelConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return from_json(j);
}

ModelConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json(const ModelConfig& c) {
  json j{
      {"depth", c.depth},
      {"width", c.width},
      {"heads", c.heads},
      {"num_classes", c.num_classes},
      {"adapter_rank", c.adapter_rank},
      {"num_components", c.num_components},
      {"lambda_g", c.lambda_g},
      {"epsilon", c.epsilon},
      {"lambda_con", c.lambda_con},
      {"lambda_dis", c.lambda_dis},
      {"lambda", c.lambda},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"weight_decay", c.weight_decay},
      {"seed", c.seed},
      {"use_positional", c.use_positional},
      {"max_len", c.max_len},
      {"lambda_fullr", c.lambda_fullr},
      {"lambda_ewc", c.lambda_ewc},
      {"lwf_temperature", c.lwf_temperature},
      {"lwf_weight", c.lwf_weight},
      {"fuse_probabilities", c.fuse_probabilities},
      {"merge_mode",
       c.merge_mode == MergeMode::kResidual ? "residual" : "multiplicative"},
      {"contrastive_form",
       c.contrastive_form == ContrastiveForm::kHinge ? "hinge" : "absolute"},
  };
  return j.dump(2);
}

}  // namespace mil
