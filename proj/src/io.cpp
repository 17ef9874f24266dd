#include "attnlens/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace attnlens {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

void append_u32le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t read_u32le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint64_t read_u64le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::string format_float(float v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

} // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw FormatError("write failed for " + path);
}

void save_weights(const std::string& path, const WeightStore& weights) {
    json header = json::object();
    std::string payload;
    uint64_t offset = 0;
    for (const auto& [name, tensor] : weights.all()) {
        header[name] = {{"shape", tensor.shape},
                        {"offset", offset},
                        {"length", tensor.size()}};
        for (Scalar v : tensor.data) {
            append_u32le(payload, std::bit_cast<uint32_t>(static_cast<float>(v)));
        }
        offset += static_cast<uint64_t>(tensor.size()) * 4;
    }
    const std::string header_text = header.dump();
    std::string out;
    uint64_t len = header_text.size();
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>(len & 0xff));
        len >>= 8;
    }
    out += header_text;
    out += payload;
    write_file(path, out);
}

WeightStore load_weights(const std::string& path) {
    const std::string raw = read_file(path);
    const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
    if (raw.size() < 8) throw FormatError("weight container shorter than its 8-byte prefix");
    const uint64_t header_len = read_u64le(bytes);
    if (8 + header_len > raw.size()) {
        throw FormatError("declared header length " + std::to_string(header_len) +
                          " overruns the file at byte 8");
    }
    json header;
    try {
        header = json::parse(raw.substr(8, header_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed weight header: ") + e.what());
    }
    if (!header.is_object()) throw FormatError("weight header must be a JSON object");

    const size_t payload_begin = 8 + header_len;
    const size_t payload_size = raw.size() - payload_begin;

    struct Entry {
        std::string name;
        uint64_t offset = 0;
        uint64_t bytes = 0;
    };
    std::vector<Entry> entries;

    WeightStore store;
    for (const auto& [name, meta] : header.items()) {
        if (!meta.is_object() || !meta.contains("shape") || !meta.contains("offset") ||
            !meta.contains("length")) {
            throw FormatError("weight header entry " + name + " is missing fields");
        }
        std::vector<int> shape;
        for (const auto& e : meta["shape"]) {
            const long long v = e.get<long long>();
            if (v <= 0) throw FormatError("weight " + name + " has a non-positive extent");
            shape.push_back(static_cast<int>(v));
        }
        const uint64_t offset = meta["offset"].get<uint64_t>();
        const uint64_t length = meta["length"].get<uint64_t>();
        if (length != static_cast<uint64_t>(shape_size(shape))) {
            throw FormatError("weight " + name + " length does not match its shape");
        }
        const uint64_t end = offset + length * 4;
        if (offset % 4 != 0 || end > payload_size) {
            throw FormatError("truncated payload for weight " + name + " at byte " +
                              std::to_string(payload_begin + offset));
        }
        entries.push_back({name, offset, length * 4});

        Tensor t = Tensor::zeros(shape);
        const unsigned char* p = bytes + payload_begin + offset;
        for (size_t i = 0; i < t.data.size(); ++i) {
            t.data[i] = static_cast<Scalar>(std::bit_cast<float>(read_u32le(p + 4 * i)));
        }
        store.set(name, std::move(t));
    }

    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.offset < b.offset; });
    for (size_t i = 1; i < entries.size(); ++i) {
        if (entries[i - 1].offset + entries[i - 1].bytes > entries[i].offset) {
            throw FormatError("weights " + entries[i - 1].name + " and " + entries[i].name +
                              " overlap at byte " +
                              std::to_string(payload_begin + entries[i].offset));
        }
    }
    return store;
}

Tensor load_image(const std::string& path) {
    const std::string raw = read_file(path);
    if (raw.size() < 2 || raw[0] != 'P' || (raw[1] != '5' && raw[1] != '6')) {
        throw FormatError("unsupported image magic in " + path + " (need binary P5 or P6)");
    }
    const int channels = raw[1] == '5' ? 1 : 3;
    size_t pos = 2;
    auto next_token = [&]() -> long long {
        for (;;) {
            while (pos < raw.size() && std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
            if (pos < raw.size() && raw[pos] == '#') {
                while (pos < raw.size() && raw[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        if (pos >= raw.size()) throw FormatError("unexpected end of image header in " + path);
        long long v = 0;
        bool any = false;
        while (pos < raw.size() && std::isdigit(static_cast<unsigned char>(raw[pos]))) {
            v = v * 10 + (raw[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw FormatError("malformed image header in " + path);
        return v;
    };
    const long long w = next_token();
    const long long h = next_token();
    const long long maxval = next_token();
    if (maxval != 255) throw FormatError("only 8-bit images are supported: " + path);
    ++pos; // single whitespace after maxval
    const size_t need = static_cast<size_t>(w) * h * channels;
    if (pos + need > raw.size()) throw FormatError("image payload truncated in " + path);
    Tensor out = Tensor::zeros({static_cast<int>(h), static_cast<int>(w), channels});
    for (size_t i = 0; i < need; ++i) {
        out.data[i] = static_cast<Scalar>(static_cast<unsigned char>(raw[pos + i])) / 255.0;
    }
    return out;
}

void save_pgm(const std::string& path, const Tensor& pixels) {
    int h = 0, w = 0;
    if (pixels.ndim() == 2) {
        h = pixels.shape[0];
        w = pixels.shape[1];
    } else if (pixels.ndim() == 3 && pixels.shape[2] == 1) {
        h = pixels.shape[0];
        w = pixels.shape[1];
    } else {
        throw ContractError("save_pgm expects a single-channel map");
    }
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (Scalar v : pixels.data) {
        const Scalar clamped = std::clamp<Scalar>(v, 0.0, 1.0);
        out.push_back(static_cast<char>(
            static_cast<unsigned char>(std::floor(clamped * 255.0 + 0.5))));
    }
    write_file(path, out);
}

void save_csv(const std::string& path, const Tensor& matrix) {
    if (matrix.ndim() != 2) throw ContractError("save_csv expects a 2-D tensor");
    std::string out;
    for (int i = 0; i < matrix.rows(); ++i) {
        for (int j = 0; j < matrix.cols(); ++j) {
            if (j) out.push_back(',');
            out += format_float(static_cast<float>(matrix.at(i, j)));
        }
        out.push_back('\n');
    }
    write_file(path, out);
}

Tensor load_csv(const std::string& path) {
    const std::string raw = read_file(path);
    std::vector<std::vector<Scalar>> rows;
    std::istringstream lines(raw);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::vector<Scalar> row;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) {
            try {
                row.push_back(static_cast<Scalar>(std::stof(cell)));
            } catch (const std::exception&) {
                throw FormatError("malformed CSV cell in " + path);
            }
        }
        if (!rows.empty() && row.size() != rows[0].size()) {
            throw FormatError("ragged CSV rows in " + path);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty() || rows[0].empty()) throw FormatError("empty CSV in " + path);
    Tensor out = Tensor::zeros({static_cast<int>(rows.size()), static_cast<int>(rows[0].size())});
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < rows[i].size(); ++j)
            out.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    return out;
}

std::string config_to_json(const ModelConfig& cfg) {
    json j;
    j["variant"] = cfg.variant == Variant::vit ? "vit" : "swin";
    j["image_size"] = cfg.image_size;
    j["patch_size"] = cfg.patch_size;
    j["channels"] = cfg.channels;
    j["embed_dim"] = cfg.embed_dim;
    j["heads"] = cfg.heads;
    j["num_classes"] = cfg.num_classes;
    j["stage_depths"] = cfg.stage_depths;
    if (cfg.variant == Variant::swin) j["window_side"] = cfg.window_side;
    j["layer_norm_eps"] = cfg.layer_norm_eps;
    return j.dump(2) + "\n";
}

ModelConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed config JSON: ") + e.what());
    }
    ModelConfig cfg;
    try {
        const std::string variant = j.at("variant").get<std::string>();
        if (variant == "vit") {
            cfg.variant = Variant::vit;
        } else if (variant == "swin") {
            cfg.variant = Variant::swin;
        } else {
            throw ConfigError("unknown variant: " + variant);
        }
        cfg.image_size = j.at("image_size").get<int>();
        cfg.patch_size = j.at("patch_size").get<int>();
        cfg.channels = j.value("channels", 1);
        cfg.embed_dim = j.at("embed_dim").get<int>();
        cfg.heads = j.at("heads").get<int>();
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.stage_depths = j.at("stage_depths").get<std::vector<int>>();
        cfg.window_side = j.value("window_side", 2);
        cfg.layer_norm_eps = j.value("layer_norm_eps", 1e-5);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void save_config(const std::string& path, const ModelConfig& cfg) {
    write_file(path, config_to_json(cfg));
}

ModelConfig load_config(const std::string& path) { return config_from_json(read_file(path)); }

void save_dataset(const std::string& dir, const std::vector<LabeledSample>& samples,
                  unsigned long long seed, Scalar noise) {
    fs::create_directories(dir);
    json meta;
    meta["seed"] = seed;
    meta["noise"] = noise;
    json list = json::array();
    for (size_t i = 0; i < samples.size(); ++i) {
        char img_name[32], mask_name[32];
        std::snprintf(img_name, sizeof(img_name), "img_%04zu.pgm", i);
        std::snprintf(mask_name, sizeof(mask_name), "mask_%04zu.pgm", i);
        save_pgm((fs::path(dir) / img_name).string(), samples[i].image);
        json entry = {{"image", img_name}, {"label", samples[i].label}};
        if (samples[i].mask) {
            save_pgm((fs::path(dir) / mask_name).string(), *samples[i].mask);
            entry["mask"] = mask_name;
        }
        list.push_back(entry);
    }
    meta["samples"] = list;
    write_file((fs::path(dir) / "dataset.json").string(), meta.dump(2) + "\n");
}

std::vector<LabeledSample> load_dataset(const std::string& dir) {
    json meta;
    try {
        meta = json::parse(read_file((fs::path(dir) / "dataset.json").string()));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed dataset.json: ") + e.what());
    }
    std::vector<LabeledSample> samples;
    for (const auto& entry : meta.at("samples")) {
        LabeledSample s;
        const Tensor img = load_image((fs::path(dir) / entry.at("image").get<std::string>()).string());
        s.image = img;
        s.label = entry.at("label").get<int>();
        if (entry.contains("mask")) {
            const Tensor m = load_image((fs::path(dir) / entry.at("mask").get<std::string>()).string());
            Tensor mask = Tensor::zeros({m.shape[0], m.shape[1]});
            for (int r = 0; r < m.shape[0]; ++r)
                for (int c = 0; c < m.shape[1]; ++c) mask.at(r, c) = m.at(r, c, 0) > 0.5 ? 1.0 : 0.0;
            s.mask = std::move(mask);
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace attnlens
