#include "mil/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mil/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mil {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

Mat randn(std::mt19937_64& rng, int rows, int cols, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

double apply_transform(const std::string& t, double x) {
  if (t == "identity") return x;
  if (t == "tanh") return std::tanh(x);
  if (t == "abs") return std::abs(x);
  throw ConfigError("unknown modality transform: " + t);
}

void write_f32_blob(const std::string& path, const std::vector<Mat>& mats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write blob: " + path);
  for (const auto& m : mats) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        float v = static_cast<float>(m(i, j));
        out.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
    }
  }
  if (!out) throw IoError("write failure on blob: " + path);
}

void write_i32_blob(const std::string& path, const std::vector<int>& vals) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write blob: " + path);
  for (int v : vals) {
    std::int32_t x = v;
    out.write(reinterpret_cast<const char*>(&x), sizeof(std::int32_t));
  }
  if (!out) throw IoError("write failure on blob: " + path);
}

std::vector<Mat> read_f32_blob(const std::string& path, int count, int rows,
                               int cols) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("missing feature blob: " + path);
  auto bytes = static_cast<std::uint64_t>(in.tellg());
  std::uint64_t expect = 4ULL * count * rows * cols;
  if (bytes != expect) {
    throw DataError("feature blob size mismatch for " + path + ": expected " +
                    std::to_string(expect) + " bytes, found " +
                    std::to_string(bytes));
  }
  in.seekg(0);
  std::vector<Mat> out(count, Mat(rows, cols));
  std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
  for (int s = 0; s < count; ++s) {
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    std::size_t idx = 0;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) out[s](i, j) = buf[idx++];
  }
  return out;
}

std::vector<int> read_i32_blob(const std::string& path, int count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("missing label blob: " + path);
  auto bytes = static_cast<std::uint64_t>(in.tellg());
  if (bytes != 4ULL * count) {
    throw DataError("label blob size mismatch for " + path);
  }
  in.seekg(0);
  std::vector<int> out(count);
  for (int i = 0; i < count; ++i) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    out[i] = v;
  }
  return out;
}

std::string default_modality_name(int i) {
  static const char* names[] = {"rgb", "flow", "audio"};
  if (i < 3) return names[i];
  return "m" + std::to_string(i);
}

std::string default_transform(int i) {
  static const char* t[] = {"identity", "tanh", "abs"};
  return t[i % 3];
}

}  // namespace

BenchmarkSpec desk_default_benchmark() {
  BenchmarkSpec s;
  s.transforms = {"identity", "tanh", "identity"};
  s.noise_scales = {0.1, 0.1, 2.0};
  s.class_scatter = 0.3;
  return s;
}

void validate(const BenchmarkSpec& spec) {
  auto fail = [](const std::string& m) {
    throw ConfigError("invalid benchmark spec: " + m);
  };
  if (spec.num_classes < 2) fail("num_classes must be >= 2");
  if (spec.num_modalities < 2) fail("num_modalities must be >= 2");
  if (spec.train_count < 1 || spec.val_count < 1 || spec.test_count < 1) {
    fail("split counts must be >= 1");
  }
  if (spec.latent_dim < 1) fail("latent_dim must be >= 1");
  if (spec.seq_len < 1) fail("seq_len must be >= 1");
  if (!spec.feature_dims.empty() &&
      static_cast<int>(spec.feature_dims.size()) != spec.num_modalities) {
    fail("feature_dims must have one entry per modality");
  }
  for (int d : spec.feature_dims)
    if (d < 1) fail("feature dims must be >= 1");
  if (!spec.transforms.empty() &&
      static_cast<int>(spec.transforms.size()) != spec.num_modalities) {
    fail("transforms must have one entry per modality");
  }
  for (const auto& t : spec.transforms) {
    if (t != "identity" && t != "tanh" && t != "abs") {
      fail("unknown transform: " + t);
    }
  }
  if (spec.noise_scale < 0) fail("noise_scale must be >= 0");
  if (!spec.noise_scales.empty() &&
      static_cast<int>(spec.noise_scales.size()) != spec.num_modalities) {
    fail("noise_scales must have one entry per modality");
  }
  for (double s : spec.noise_scales)
    if (s < 0) fail("noise_scales entries must be >= 0");
  if (spec.class_scatter < 0) fail("class_scatter must be >= 0");
}

BenchmarkSpec benchmark_spec_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("benchmark spec parse error: ") + e.what());
  }
  BenchmarkSpec s;
  auto maybe = [&](const char* k, auto& out) {
    if (j.contains(k)) out = j.at(k).get<std::decay_t<decltype(out)>>();
  };
  maybe("name", s.name);
  maybe("num_classes", s.num_classes);
  maybe("num_modalities", s.num_modalities);
  maybe("train_count", s.train_count);
  maybe("val_count", s.val_count);
  maybe("test_count", s.test_count);
  maybe("latent_dim", s.latent_dim);
  maybe("seq_len", s.seq_len);
  maybe("feature_dims", s.feature_dims);
  maybe("transforms", s.transforms);
  maybe("modality_names", s.modality_names);
  maybe("noise_scale", s.noise_scale);
  maybe("noise_scales", s.noise_scales);
  maybe("class_scatter", s.class_scatter);
  maybe("seed", s.seed);
  validate(s);
  return s;
}

BenchmarkSpec benchmark_spec_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open benchmark spec: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return benchmark_spec_from_json_text(ss.str());
}

std::string benchmark_spec_to_json(const BenchmarkSpec& s) {
  json j{{"name", s.name},
         {"num_classes", s.num_classes},
         {"num_modalities", s.num_modalities},
         {"train_count", s.train_count},
         {"val_count", s.val_count},
         {"test_count", s.test_count},
         {"latent_dim", s.latent_dim},
         {"seq_len", s.seq_len},
         {"feature_dims", s.feature_dims},
         {"transforms", s.transforms},
         {"modality_names", s.modality_names},
         {"noise_scale", s.noise_scale},
         {"noise_scales", s.noise_scales},
         {"class_scatter", s.class_scatter},
         {"seed", s.seed}};
  return j.dump(2);
}

std::string generate_benchmark(const BenchmarkSpec& spec,
                               const std::string& out_dir, bool overwrite) {
  validate(spec);
  fs::create_directories(out_dir);
  fs::path manifest_path = fs::path(out_dir) / "manifest.json";
  if (fs::exists(manifest_path) && !overwrite) {
    throw IoError("refusing to overwrite existing manifest: " +
                  manifest_path.string() + " (pass --force)");
  }

  const int width_default = 64;
  std::vector<int> dims = spec.feature_dims;
  if (dims.empty()) dims.assign(spec.num_modalities, width_default);
  std::vector<std::string> transforms = spec.transforms;
  if (transforms.empty()) {
    for (int m = 0; m < spec.num_modalities; ++m)
      transforms.push_back(default_transform(m));
  }
  std::vector<double> noise = spec.noise_scales;
  if (noise.empty()) noise.assign(spec.num_modalities, spec.noise_scale);
  std::vector<std::string> names = spec.modality_names;
  if (names.empty()) {
    for (int m = 0; m < spec.num_modalities; ++m)
      names.push_back(default_modality_name(m));
  }

  // class centers and per-modality maps from the top-level seed
  std::mt19937_64 rng(spec.seed);
  Mat centers = randn(rng, spec.num_classes, spec.latent_dim, 1.0);
  std::vector<Mat> maps;
  std::vector<Eigen::RowVectorXd> offsets;
  for (int m = 0; m < spec.num_modalities; ++m) {
    maps.push_back(
        randn(rng, dims[m], spec.latent_dim, 1.0 / std::sqrt(spec.latent_dim)));
    offsets.push_back(randn(rng, 1, dims[m], 0.5).row(0));
  }

  struct SplitPlan {
    const char* name;
    int count;
    int id_offset;
  };
  const SplitPlan plans[3] = {
      {"train", spec.train_count, 0},
      {"val", spec.val_count, spec.train_count},
      {"test", spec.test_count, spec.train_count + spec.val_count}};

  json jmods = json::array();
  for (int m = 0; m < spec.num_modalities; ++m) {
    json jsplits;
    for (const auto& plan : plans) {
      std::vector<Mat> feats;
      std::vector<int> labels;
      std::vector<int> ids;
      feats.reserve(plan.count);
      for (int s = 0; s < plan.count; ++s) {
        int id = plan.id_offset + s;
        int label = id % spec.num_classes;
        // per-sample latent shared across modalities (pairing)
        std::mt19937_64 sample_rng(mix(spec.seed, 1000003ULL + id));
        Eigen::VectorXd z =
            centers.row(label).transpose() +
            spec.class_scatter *
                randn(sample_rng, spec.latent_dim, 1, 1.0).col(0);
        Eigen::VectorXd base = maps[m] * z + offsets[m].transpose();
        // token noise specific to (sample, modality)
        std::mt19937_64 tok_rng(mix(mix(spec.seed, 7700003ULL + id), m + 1));
        Mat tokens(spec.seq_len, dims[m]);
        std::normal_distribution<double> nd(0.0, 1.0);
        for (int j = 0; j < spec.seq_len; ++j) {
          for (int c = 0; c < dims[m]; ++c) {
            double v = apply_transform(transforms[m], base(c));
            tokens(j, c) = v + noise[m] * nd(tok_rng);
          }
        }
        feats.push_back(std::move(tokens));
        labels.push_back(label);
        ids.push_back(id);
      }
      std::string fbase =
          "mod" + std::to_string(m) + "_" + plan.name;
      std::string fpath = fbase + "_features.f32";
      std::string lpath = fbase + "_labels.i32";
      write_f32_blob((fs::path(out_dir) / fpath).string(), feats);
      write_i32_blob((fs::path(out_dir) / lpath).string(), labels);
      jsplits[plan.name] = {{"count", plan.count},
                            {"features", fpath},
                            {"labels", lpath},
                            {"id_offset", plan.id_offset}};
    }
    jmods.push_back({{"id", m},
                     {"name", names[m]},
                     {"raw_dim", dims[m]},
                     {"seq_len", spec.seq_len},
                     {"transform", transforms[m]},
                     {"splits", jsplits}});
  }

  json manifest{{"name", spec.name},
                {"version", 1},
                {"num_classes", spec.num_classes},
                {"paired_test", true},
                {"modalities", jmods},
                {"spec", json::parse(benchmark_spec_to_json(spec))}};
  std::ofstream out(manifest_path);
  if (!out) throw IoError("cannot write manifest: " + manifest_path.string());
  out << manifest.dump(2) << "\n";
  return manifest_path.string();
}

Dataset load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest parse error: ") + e.what());
  }
  fs::path dir = fs::path(manifest_path).parent_path();

  Dataset ds;
  try {
    ds.name = j.at("name").get<std::string>();
    ds.num_classes = j.at("num_classes").get<int>();
    for (const auto& jm : j.at("modalities")) {
      ModalityData mod;
      mod.id = jm.at("id").get<int>();
      mod.name = jm.at("name").get<std::string>();
      mod.raw_dim = jm.at("raw_dim").get<int>();
      mod.seq_len = jm.at("seq_len").get<int>();
      auto load_split = [&](const char* key) {
        const auto& js = jm.at("splits").at(key);
        Split sp;
        int count = js.at("count").get<int>();
        sp.features = read_f32_blob(
            (dir / js.at("features").get<std::string>()).string(), count,
            mod.seq_len, mod.raw_dim);
        sp.labels = read_i32_blob(
            (dir / js.at("labels").get<std::string>()).string(), count);
        int off = js.value("id_offset", 0);
        for (int i = 0; i < count; ++i) sp.ids.push_back(off + i);
        for (int l : sp.labels) {
          if (l < 0 || l >= ds.num_classes) {
            throw DataError("label " + std::to_string(l) +
                            " out of range for num_classes " +
                            std::to_string(ds.num_classes) + " in " +
                            js.at("labels").get<std::string>());
          }
        }
        return sp;
      };
      mod.train = load_split("train");
      mod.val = load_split("val");
      mod.test = load_split("test");

      std::set<int> seen;
      auto check_disjoint = [&](const Split& sp, const char* name) {
        for (int id : sp.ids) {
          if (!seen.insert(id).second) {
            throw DataError("duplicate sample id " + std::to_string(id) +
                            " across splits (" + name + ") in modality " +
                            mod.name);
          }
        }
      };
      check_disjoint(mod.train, "train");
      check_disjoint(mod.val, "val");
      check_disjoint(mod.test, "test");
      ds.modalities.push_back(std::move(mod));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest field error: ") + e.what());
  }
  return ds;
}

bool has_paired_test_set(const Dataset& ds) {
  if (ds.modalities.empty()) return false;
  const auto& ref = ds.modalities.front().test.ids;
  for (const auto& mod : ds.modalities) {
    if (mod.test.ids != ref) return false;
  }
  return true;
}

const ModalityData* Dataset::find_modality(const std::string& name_or_id) const {
  for (const auto& m : modalities) {
    if (m.name == name_or_id || std::to_string(m.id) == name_or_id) return &m;
  }
  return nullptr;
}

FeatureSequence feature_at(const ModalityData& mod, const Split& split,
                           std::size_t i) {
  FeatureSequence f;
  f.tokens = split.features.at(i);
  f.modality = mod.id;
  return f;
}

}  // namespace mil
