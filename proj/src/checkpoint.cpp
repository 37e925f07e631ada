#include "scafusion/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace scafusion {

namespace {

uint64_t fnv1a(const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

void save_checkpoint(const std::string& dir, const ParamStoreF& store, const RunConfig& cfg) {
    fs::create_directories(dir);

    json manifest;
    manifest["format_version"] = kCheckpointVersion;
    json tensors = json::array();
    int64_t offset = 0;
    int64_t adapter_count = 0;
    std::vector<float> payload;
    for (const auto& p : store.all()) {
        json jt;
        jt["name"] = p.name;
        jt["shape"] = p.tensor.shape();
        jt["offset"] = offset;
        jt["count"] = p.tensor.numel();
        jt["trainable"] = p.trainable;
        jt["hash"] = fnv1a(p.tensor.data().data(), p.tensor.data().size() * sizeof(float));
        tensors.push_back(jt);
        payload.insert(payload.end(), p.tensor.data().begin(), p.tensor.data().end());
        offset += p.tensor.numel();
        if (p.name.find(".mona") != std::string::npos) adapter_count += p.tensor.numel();
    }
    manifest["tensors"] = tensors;
    manifest["total_params"] = offset;
    manifest["adapter_params"] = adapter_count;
    manifest["trainable_params"] = store.trainable_count();

    // keep the run configuration alongside the weights
    const std::string cfg_tmp = (fs::path(dir) / "config.json.tmp").string();
    save_config(cfg_tmp, cfg);
    fs::rename(cfg_tmp, fs::path(dir) / "config.json");

    const std::string bin_tmp = (fs::path(dir) / "params.bin.tmp").string();
    {
        std::ofstream f(bin_tmp, std::ios::binary);
        if (!f) throw std::runtime_error("save_checkpoint: cannot write " + bin_tmp);
        f.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!f) throw std::runtime_error("save_checkpoint: short write to " + bin_tmp);
    }
    fs::rename(bin_tmp, fs::path(dir) / "params.bin");

    const std::string man_tmp = (fs::path(dir) / "manifest.json.tmp").string();
    std::ofstream(man_tmp) << manifest.dump(2) << "\n";
    fs::rename(man_tmp, fs::path(dir) / "manifest.json");
}

void load_checkpoint(const std::string& dir, ParamStoreF& store) {
    const std::string man_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream mf(man_path);
    if (!mf) throw std::runtime_error("load_checkpoint: cannot open " + man_path);
    json manifest = json::parse(mf, nullptr, true);
    if (manifest.value("format_version", 0u) != kCheckpointVersion)
        throw std::runtime_error(man_path + ": unsupported checkpoint version");

    const std::string bin_path = (fs::path(dir) / "params.bin").string();
    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) throw std::runtime_error("load_checkpoint: cannot open " + bin_path);
    std::vector<float> payload;
    {
        bf.seekg(0, std::ios::end);
        const auto bytes = static_cast<size_t>(bf.tellg());
        bf.seekg(0);
        payload.resize(bytes / sizeof(float));
        if (!bf.read(reinterpret_cast<char*>(payload.data()),
                     static_cast<std::streamsize>(bytes)))
            throw std::runtime_error(bin_path + ": truncated payload");
    }

    for (const auto& jt : manifest.at("tensors")) {
        const std::string name = jt.at("name").get<std::string>();
        const Shape shape = jt.at("shape").get<Shape>();
        const int64_t offset = jt.at("offset").get<int64_t>();
        const int64_t count = jt.at("count").get<int64_t>();
        if (!store.has(name))
            throw std::runtime_error("load_checkpoint: model has no parameter '" + name + "'");
        auto& p = store.at(name);
        if (p.tensor.shape() != shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for '" + name +
                                     "': checkpoint " + shape_str(shape) + " vs model " +
                                     shape_str(p.tensor.shape()));
        if (offset + count > static_cast<int64_t>(payload.size()))
            throw std::runtime_error(bin_path + ": payload too short for '" + name + "'");
        const uint64_t h =
            fnv1a(payload.data() + offset, static_cast<size_t>(count) * sizeof(float));
        if (h != jt.at("hash").get<uint64_t>())
            throw std::runtime_error("load_checkpoint: corrupt payload for '" + name + "'");
        std::memcpy(p.tensor.data().data(), payload.data() + offset,
                    static_cast<size_t>(count) * sizeof(float));
        store.set_trainable(name, jt.at("trainable").get<bool>());
    }
}

RunConfig checkpoint_config(const std::string& dir) {
    return load_config((fs::path(dir) / "config.json").string());
}

}  // namespace scafusion
