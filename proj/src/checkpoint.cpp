#include <fstream>

#include "mtsnet/model.hpp"
#include "mtsnet/serialize.hpp"

namespace mtsnet::model {

namespace {

constexpr const char* kFormat = "mtsnet-checkpoint-1";

std::string extent_str(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, Model& model, const KeyValues& extra) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw CheckpointError("cannot create " + dir.string() + ": " + ec.message());

    KeyValues manifest{{"format", kFormat}};
    for (auto& kv : spec_to_entries(model.spec())) manifest.push_back(kv);
    for (const auto& kv : extra) manifest.push_back(kv);
    model.visit([&](const std::string& name, Tensor& t, bool) {
        manifest.emplace_back("tensor." + name, extent_str(t.shape()));
        try {
            save_mtsv(dir / (name + ".mtsv"), t);
        } catch (const DataError& e) {
            throw CheckpointError(e.what());
        }
    });
    std::ofstream os(dir / "manifest.txt", std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + (dir / "manifest.txt").string());
    write_key_values(os, manifest);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.txt";
    if (!std::filesystem::exists(manifest_path)) throw CheckpointError("no manifest.txt in " + dir.string());
    Checkpoint ckpt;
    try {
        ckpt.manifest = to_map(read_key_values(manifest_path));
    } catch (const ConfigError& e) {
        throw CheckpointError(e.what());
    }
    if (ckpt.manifest["format"] != kFormat) throw CheckpointError(manifest_path.string() + ": unsupported format");
    try {
        ckpt.model = std::make_unique<Model>(spec_from_entries(ckpt.manifest));
    } catch (const ConfigError& e) {
        throw CheckpointError(manifest_path.string() + ": " + e.what());
    }
    ckpt.model->visit([&](const std::string& name, Tensor& t, bool) {
        const auto it = ckpt.manifest.find("tensor." + name);
        if (it == ckpt.manifest.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
        if (it->second != extent_str(t.shape())) {
            throw CheckpointError("tensor '" + name + "' has shape " + it->second + " but the model spec requires " +
                                  extent_str(t.shape()));
        }
        Tensor stored;
        try {
            stored = load_mtsv(dir / (name + ".mtsv"));
        } catch (const DataError& e) {
            throw CheckpointError(e.what());
        }
        if (stored.shape() != t.shape()) {
            throw CheckpointError("tensor file '" + name + "' has shape " + extent_str(stored.shape()) +
                                  " but the model spec requires " + extent_str(t.shape()));
        }
        std::copy(stored.data().begin(), stored.data().end(), t.mutable_data().begin());
    });
    return ckpt;
}

}  // namespace mtsnet::model
