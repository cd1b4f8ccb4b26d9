#include "sagnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace sagnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'A', 'G', 'C', 'K', 'P', 'T', '1'};

nlohmann::json config_to_json(const StageCNNConfig& cfg) {
  return {{"num_stages", cfg.num_stages},
          {"channels", cfg.channels},
          {"blocks_per_stage", cfg.blocks_per_stage},
          {"num_classes", cfg.num_classes},
          {"in_channels", cfg.in_channels},
          {"in_height", cfg.in_height},
          {"in_width", cfg.in_width},
          {"randomization_stage", cfg.randomization_stage},
          {"eps_norm", cfg.eps_norm},
          {"eps_stats", cfg.eps_stats}};
}

StageCNNConfig config_from_json(const nlohmann::json& j) {
  StageCNNConfig cfg;
  cfg.num_stages = j.at("num_stages").get<int>();
  cfg.channels = j.at("channels").get<std::vector<int>>();
  cfg.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.in_height = j.at("in_height").get<int>();
  cfg.in_width = j.at("in_width").get<int>();
  cfg.randomization_stage = j.at("randomization_stage").get<int>();
  cfg.eps_norm = j.at("eps_norm").get<double>();
  cfg.eps_stats = j.at("eps_stats").get<double>();
  return cfg;
}

struct GroupedParams {
  std::vector<NamedParam<float>> params;
  std::vector<std::string> groups;
};

GroupedParams ordered_params(const ModelBundle<float>& model) {
  GroupedParams gp;
  for (auto& p : model.f_all()) {
    gp.params.push_back(p);
    gp.groups.push_back(p.affine ? "f_affine" : "f_all");
  }
  for (auto& p : model.c_all()) {
    gp.params.push_back(p);
    gp.groups.push_back("c_all");
  }
  for (auto& p : model.s_all()) {
    gp.params.push_back(p);
    gp.groups.push_back("s_all");
  }
  return gp;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle<float>& model,
                     std::uint64_t train_seed) {
  const auto gp = ordered_params(model);
  nlohmann::json header;
  header["format_version"] = 1;
  header["config"] = config_to_json(model.config);
  header["seeds"] = {{"init", model.init_seed}, {"train", train_seed}};
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < gp.params.size(); ++i) {
    params.push_back({{"name", gp.params[i].name},
                      {"shape", gp.params[i].tensor->shape},
                      {"group", gp.groups[i]}});
  }
  header["params"] = params;
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : gp.params) {
    f.write(reinterpret_cast<const char*>(p.tensor->data.data()),
            static_cast<std::streamsize>(p.tensor->data.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("load_checkpoint: truncated header in " + path);
  const nlohmann::json header = nlohmann::json::parse(hs);
  if (header.at("format_version").get<int>() != 1) {
    throw std::runtime_error("load_checkpoint: unsupported format version");
  }

  LoadedCheckpoint out;
  out.init_seed = header.at("seeds").at("init").get<std::uint64_t>();
  out.train_seed = header.at("seeds").at("train").get<std::uint64_t>();
  out.model = build_model<float>(config_from_json(header.at("config")), out.init_seed);

  const auto gp = ordered_params(out.model);
  const auto& plist = header.at("params");
  if (plist.size() != gp.params.size()) {
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  }
  for (std::size_t i = 0; i < gp.params.size(); ++i) {
    const auto& meta = plist[i];
    if (meta.at("name").get<std::string>() != gp.params[i].name ||
        meta.at("shape").get<std::vector<int>>() != gp.params[i].tensor->shape) {
      throw std::runtime_error("load_checkpoint: parameter layout mismatch at " + gp.params[i].name);
    }
    f.read(reinterpret_cast<char*>(gp.params[i].tensor->data.data()),
           static_cast<std::streamsize>(gp.params[i].tensor->data.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
  return out;
}

}  // namespace sagnet
