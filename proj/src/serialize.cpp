#include "decompnet/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>

// Checkpoint container (see docs/formats.md):
//   bytes 0..3   magic "DCNW"
//   bytes 4..7   format version, u32 little-endian
//   bytes 8..15  JSON header length in bytes, u64 little-endian
//   header       UTF-8 JSON (input shape, layer specs, user metadata)
//   payload      f64 little-endian blocks per layer, in declaration order:
//                weight (row-major), bias, bn gamma, beta, mean, var

namespace decompnet {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'D', 'C', 'N', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(sizeof(double) == 8, "checkpoint format assumes 64-bit doubles");

bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
    if (host_is_little_endian()) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
        return;
    }
    for (std::size_t i = 0; i < count; ++i) {
        unsigned char raw[8];
        std::memcpy(raw, &data[i], 8);
        char le[8];
        for (int k = 0; k < 8; ++k) le[k] = static_cast<char>(raw[7 - k]);
        out.write(le, 8);
    }
}

void read_doubles(std::ifstream& in, double* data, std::size_t count) {
    if (host_is_little_endian()) {
        in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 8));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            char le[8];
            in.read(le, 8);
            unsigned char raw[8];
            for (int k = 0; k < 8; ++k) raw[k] = static_cast<unsigned char>(le[7 - k]);
            std::memcpy(&data[i], raw, 8);
        }
    }
    if (!in) throw ParseError("checkpoint: truncated parameter payload");
}

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::identity: return "identity";
        case Activation::softmax_output: return "softmax";
    }
    return "relu";
}

Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    if (s == "softmax") return Activation::softmax_output;
    throw ParseError("checkpoint: unknown activation '" + s + "'");
}

json layer_to_json(const LayerSpec& spec) {
    json j;
    j["kind"] = spec.kind == LayerKind::dense ? "dense" : "conv";
    j["activation"] = activation_name(spec.activation);
    j["bias"] = spec.has_bias;
    j["batchnorm"] = spec.has_batchnorm;
    if (spec.kind == LayerKind::dense) {
        j["in_dim"] = spec.in_dim;
        j["out_dim"] = spec.out_dim;
    } else {
        j["k_h"] = spec.conv.k_h;
        j["k_w"] = spec.conv.k_w;
        j["c_in"] = spec.conv.c_in;
        j["c_out"] = spec.conv.c_out;
        j["stride"] = spec.conv.stride;
        j["decomposition"] =
            spec.decomposition == ConvDecomposition::channel ? "channel" : "spatial";
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    LayerSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    spec.activation = activation_from_name(j.at("activation").get<std::string>());
    spec.has_bias = j.at("bias").get<bool>();
    spec.has_batchnorm = j.at("batchnorm").get<bool>();
    if (kind == "dense") {
        spec.kind = LayerKind::dense;
        spec.in_dim = j.at("in_dim").get<std::size_t>();
        spec.out_dim = j.at("out_dim").get<std::size_t>();
    } else if (kind == "conv") {
        spec.kind = LayerKind::conv;
        spec.conv.k_h = j.at("k_h").get<std::size_t>();
        spec.conv.k_w = j.at("k_w").get<std::size_t>();
        spec.conv.c_in = j.at("c_in").get<std::size_t>();
        spec.conv.c_out = j.at("c_out").get<std::size_t>();
        spec.conv.stride = j.at("stride").get<std::size_t>();
        const std::string dec = j.at("decomposition").get<std::string>();
        if (dec == "channel")
            spec.decomposition = ConvDecomposition::channel;
        else if (dec == "spatial")
            spec.decomposition = ConvDecomposition::spatial;
        else
            throw ParseError("checkpoint: unknown decomposition '" + dec + "'");
    } else {
        throw ParseError("checkpoint: unknown layer kind '" + kind + "'");
    }
    return spec;
}

} // namespace

void save_model(const NetworkModel& model, const std::string& path,
                const std::string& meta_json) {
    json header;
    header["input"] = {{"channels", model.input.channels},
                       {"height", model.input.height},
                       {"width", model.input.width}};
    header["layers"] = json::array();
    for (const LayerSpec& spec : model.layers) header["layers"].push_back(layer_to_json(spec));
    try {
        header["meta"] = json::parse(meta_json);
    } catch (const json::parse_error& e) {
        throw InvalidInputError(std::string("save_model: metadata is not valid JSON: ") +
                                e.what());
    }
    const std::string header_bytes = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInputError("save_model: cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    const std::uint32_t version = kFormatVersion;
    const std::uint64_t hlen = header_bytes.size();
    unsigned char fixed[12];
    for (int i = 0; i < 4; ++i) fixed[i] = static_cast<unsigned char>(version >> (8 * i));
    for (int i = 0; i < 8; ++i) fixed[4 + i] = static_cast<unsigned char>(hlen >> (8 * i));
    out.write(reinterpret_cast<const char*>(fixed), 12);
    out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));

    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        write_doubles(out, model.weights[l].data(), model.weights[l].size());
        write_doubles(out, model.biases[l].data(), model.biases[l].size());
        const BatchNormState& s = model.bn[l];
        write_doubles(out, s.gamma.data(), s.gamma.size());
        write_doubles(out, s.beta.data(), s.beta.size());
        write_doubles(out, s.mean.data(), s.mean.size());
        write_doubles(out, s.var.data(), s.var.size());
    }
    out.flush();
    if (!out) throw InvalidInputError("save_model: write failed for '" + path + "'");
}

NetworkModel load_model(const std::string& path, std::string* meta_json) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_model: cannot open '" + path + "'");

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("checkpoint: bad magic at byte offset 0");
    unsigned char fixed[12];
    in.read(reinterpret_cast<char*>(fixed), 12);
    if (!in) throw ParseError("checkpoint: truncated header at byte offset 4");
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(fixed[i]) << (8 * i);
    for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(fixed[4 + i]) << (8 * i);
    if (version != kFormatVersion)
        throw ParseError("checkpoint: unsupported format version " + std::to_string(version));

    std::string header_bytes(hlen, '\0');
    in.read(header_bytes.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ParseError("checkpoint: truncated JSON header at byte offset 16");

    json header;
    try {
        header = json::parse(header_bytes);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("checkpoint: malformed JSON header: ") + e.what());
    }

    NetworkModel model;
    const json& jin = header.at("input");
    model.input.channels = jin.at("channels").get<std::size_t>();
    model.input.height = jin.at("height").get<std::size_t>();
    model.input.width = jin.at("width").get<std::size_t>();
    for (const json& jl : header.at("layers")) model.layers.push_back(layer_from_json(jl));
    model.finalize();
    if (meta_json) *meta_json = header.at("meta").dump();

    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        read_doubles(in, model.weights[l].data(), model.weights[l].size());
        read_doubles(in, model.biases[l].data(), model.biases[l].size());
        BatchNormState& s = model.bn[l];
        read_doubles(in, s.gamma.data(), s.gamma.size());
        read_doubles(in, s.beta.data(), s.beta.size());
        read_doubles(in, s.mean.data(), s.mean.size());
        read_doubles(in, s.var.data(), s.var.size());
    }
    in.peek();
    if (!in.eof()) throw ParseError("checkpoint: trailing bytes after parameter payload");
    return model;
}

} // namespace decompnet
