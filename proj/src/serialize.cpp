#include "mil/serialize.hpp"

#include <fstream>

#include "json.hpp"
#include "mil/errors.hpp"

using nlohmann::json;

namespace mil {

void save_checkpoint(const ModelState& model, const std::string& base_path) {
  std::ofstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot write checkpoint: " + base_path + ".bin");
  json params = json::array();
  std::uint64_t offset = 0;
  for_each_param(model, [&](const std::string& name, const Mat& m) {
    params.push_back({{"name", name},
                      {"rows", m.rows()},
                      {"cols", m.cols()},
                      {"offset", offset}});
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        float v = static_cast<float>(m(i, j));
        bin.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
    }
    offset += 4ULL * static_cast<std::uint64_t>(m.size());
  });
  if (!bin) throw IoError("write failure on checkpoint: " + base_path);

  json manifest{{"dtype", "float32_le"},
                {"config", json::parse(config_to_json(model.config))},
                {"params", params}};
  std::ofstream mf(base_path + ".manifest.json");
  if (!mf) {
    throw IoError("cannot write checkpoint manifest: " + base_path);
  }
  mf << manifest.dump(2) << "\n";
}

ModelState load_checkpoint(const std::string& base_path) {
  std::ifstream mf(base_path + ".manifest.json");
  if (!mf) throw IoError("cannot open checkpoint manifest: " + base_path);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest parse error: ") +
                    e.what());
  }
  ModelConfig cfg = config_from_json_text(manifest.at("config").dump());
  ModelState model = init_model(cfg);

  // pre-create ingestion projections named in the manifest
  for (const auto& p : manifest.at("params")) {
    std::string name = p.at("name").get<std::string>();
    if (name.rfind("input_proj.", 0) == 0) {
      int id = std::stoi(name.substr(11));
      model.input_proj[id] =
          Mat::Zero(p.at("rows").get<int>(), p.at("cols").get<int>());
    }
  }

  std::ifstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open checkpoint: " + base_path + ".bin");

  std::map<std::string, const json*> by_name;
  for (const auto& p : manifest.at("params")) {
    by_name[p.at("name").get<std::string>()] = &p;
  }
  for_each_param(model, [&](const std::string& name, Mat& m) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw DataError("checkpoint missing parameter: " + name);
    }
    const json& p = *it->second;
    if (p.at("rows").get<Eigen::Index>() != m.rows() ||
        p.at("cols").get<Eigen::Index>() != m.cols()) {
      throw DataError("checkpoint shape mismatch for " + name);
    }
    bin.seekg(static_cast<std::streamoff>(p.at("offset").get<std::uint64_t>()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        float v = 0.0f;
        bin.read(reinterpret_cast<char*>(&v), sizeof(float));
        m(i, j) = v;
      }
    }
    if (!bin) throw DataError("checkpoint truncated at " + name);
  });
  return model;
}

}  // namespace mil
