#include "wase/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "wase/common.hpp"

namespace wase {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written as host-order doubles");

namespace {

constexpr char kMagic[4] = {'W', 'A', 'S', 'E'};
constexpr uint32_t kVersion = 1;

void write_raw(std::ofstream& out, const void* data, size_t bytes) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

void read_raw(std::ifstream& in, void* data, size_t bytes, const std::string& path) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
    if (static_cast<size_t>(in.gcount()) != bytes) throw io_error("truncated checkpoint: " + path);
}

// Reads magic, version, and the JSON header; leaves the stream at the payload.
json read_header(std::ifstream& in, const std::string& path) {
    if (!in) throw io_error("cannot open checkpoint: " + path);
    char magic[4];
    read_raw(in, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0) throw io_error("not a checkpoint file: " + path);
    uint32_t version = 0;
    read_raw(in, &version, sizeof version, path);
    if (version != kVersion)
        throw io_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    uint64_t header_len = 0;
    read_raw(in, &header_len, sizeof header_len, path);
    if (header_len == 0 || header_len > (64ULL << 20))
        throw io_error("corrupt checkpoint header: " + path);
    std::string text(header_len, '\0');
    read_raw(in, text.data(), header_len, path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw io_error("corrupt checkpoint header: " + path + ": " + e.what());
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const WaseModel& model, const TrainSnapshot* train,
                     AdamOptimizer* opt) {
    const auto& params = model.named_params();
    if (opt && opt->num_params() != params.size())
        throw config_error("optimizer/model parameter count mismatch");

    json manifest = json::array();
    uint64_t offset = 0;  // in doubles from payload start
    for (const auto& [name, t] : params) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<uint64_t>(t.size());
    }

    json header;
    header["config"] = json::parse(model_config_to_json(model.config()));
    header["params"] = std::move(manifest);
    if (train) {
        header["train"] = {
            {"epoch", train->epoch},
            {"lr", train->lr},
            {"best_dev", train->best_dev},
            {"epochs_since_improve", train->epochs_since_improve},
            {"stop", train->stop},
            {"vp_frozen", train->vp_frozen},
            {"step", train->step},
            {"seed", train->seed},
        };
    }
    if (opt) header["adam"] = {{"step", opt->step_count()}, {"offset", offset}};

    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write checkpoint: " + path);
    write_raw(out, kMagic, 4);
    write_raw(out, &kVersion, sizeof kVersion);
    const uint64_t header_len = text.size();
    write_raw(out, &header_len, sizeof header_len);
    write_raw(out, text.data(), text.size());
    for (const auto& [name, t] : params)
        write_raw(out, t.values().data(), t.values().size() * sizeof(double));
    if (opt) {
        for (size_t i = 0; i < opt->num_params(); ++i) {
            write_raw(out, opt->moment1(i).data(), opt->moment1(i).size() * sizeof(double));
            write_raw(out, opt->moment2(i).data(), opt->moment2(i).size() * sizeof(double));
        }
    }
    out.flush();
    if (!out) throw io_error("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, WaseModel& model, AdamOptimizer* opt) {
    std::ifstream in(path, std::ios::binary);
    json header = read_header(in, path);

    const json model_cfg = json::parse(model_config_to_json(model.config()));
    if (!header.contains("config") || !header.contains("params"))
        throw io_error("corrupt checkpoint header: " + path);
    if (header["config"] != model_cfg)
        throw config_error("checkpoint config does not match model: " + path);

    const auto& params = model.named_params();
    const json& manifest = header["params"];
    if (manifest.size() != params.size())
        throw config_error("checkpoint parameter count mismatch: " + path);

    uint64_t offset = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        const json& entry = manifest[i];
        Tensor t = params[i].second;
        if (entry.value("name", std::string()) != params[i].first ||
            entry.value("shape", std::vector<int>()) != t.shape() ||
            entry.value("offset", uint64_t(0)) != offset)
            throw config_error("checkpoint parameter mismatch at " + params[i].first + ": " + path);
        read_raw(in, t.values().data(), t.values().size() * sizeof(double), path);
        offset += static_cast<uint64_t>(t.size());
    }

    LoadedCheckpoint loaded;
    if (header.contains("train")) {
        const json& tr = header["train"];
        loaded.has_train = true;
        loaded.train.epoch = tr.value("epoch", 0);
        loaded.train.lr = tr.value("lr", 0.0);
        loaded.train.best_dev = tr.value("best_dev", 0.0);
        loaded.train.epochs_since_improve = tr.value("epochs_since_improve", 0);
        loaded.train.stop = tr.value("stop", false);
        loaded.train.vp_frozen = tr.value("vp_frozen", false);
        loaded.train.step = tr.value("step", int64_t(0));
        loaded.train.seed = tr.value("seed", uint64_t(0));
    }
    if (header.contains("adam")) {
        loaded.has_optimizer = true;
        if (opt) {
            if (opt->num_params() != params.size())
                throw config_error("optimizer/model parameter count mismatch");
            if (header["adam"].value("offset", uint64_t(0)) != offset)
                throw config_error("checkpoint optimizer offset mismatch: " + path);
            for (size_t i = 0; i < opt->num_params(); ++i) {
                read_raw(in, opt->moment1(i).data(), opt->moment1(i).size() * sizeof(double), path);
                read_raw(in, opt->moment2(i).data(), opt->moment2(i).size() * sizeof(double), path);
            }
            opt->set_step_count(header["adam"].value("step", int64_t(0)));
        }
    } else if (opt) {
        throw io_error("checkpoint has no optimizer state: " + path);
    }
    return loaded;
}

ModelConfig peek_checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    json header = read_header(in, path);
    if (!header.contains("config")) throw io_error("corrupt checkpoint header: " + path);
    return model_config_from_json(header["config"].dump());
}

}  // namespace wase
