#include "cdam/vtw.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include <json.hpp>

#include "cdam/error.hpp"

namespace cdam {

using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "VTW I/O assumes a little-endian host");

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

json config_to_json(const ViTConfig& c) {
    return json{{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"d_model", c.d_model},
                {"n_heads", c.n_heads},       {"n_blocks", c.n_blocks},     {"d_mlp", c.d_mlp},
                {"n_classes", c.n_classes},   {"ln_eps", c.ln_eps},         {"n_registers", c.n_registers},
                {"tail_mode", tail_mode_name(c.tail_mode)}};
}

ViTConfig config_from_json(const json& j) {
    if (!j.is_object()) fail(Errc::invalid_config, "weight header: 'config' must be an object");
    auto need = [&](const char* key) -> const json& {
        auto it = j.find(key);
        if (it == j.end()) fail(Errc::invalid_config, std::string("weight header: config lacks '") + key + "'");
        return *it;
    };
    auto count = [&](const char* key) -> std::size_t {
        const json& v = need(key);
        if (!v.is_number_unsigned()) fail(Errc::invalid_config, std::string("config.") + key + " must be a non-negative integer");
        return v.get<std::size_t>();
    };
    ViTConfig c;
    c.image_size = count("image_size");
    c.patch_size = count("patch_size");
    c.d_model = count("d_model");
    c.n_heads = count("n_heads");
    c.n_blocks = count("n_blocks");
    c.d_mlp = count("d_mlp");
    c.n_classes = count("n_classes");
    const json& eps = need("ln_eps");
    if (!eps.is_number()) fail(Errc::invalid_config, "config.ln_eps must be a number");
    c.ln_eps = eps.get<double>();
    if (j.contains("n_registers")) c.n_registers = count("n_registers");
    if (j.contains("tail_mode")) {
        if (!j["tail_mode"].is_string()) fail(Errc::invalid_config, "config.tail_mode must be a string");
        c.tail_mode = parse_tail_mode(j["tail_mode"].get<std::string>());
    }
    c.validate();
    return c;
}

Preprocess preprocess_from_json(const json& j) {
    Preprocess p;
    if (j.is_null()) return p;
    auto triple = [&](const char* key, std::array<double, 3>& out) {
        if (!j.contains(key)) return;
        const json& v = j[key];
        if (!v.is_array() || v.size() != 3) {
            fail(Errc::invalid_config, std::string("preprocess.") + key + " must be an array of 3 numbers");
        }
        for (int i = 0; i < 3; ++i) {
            if (!v[i].is_number()) fail(Errc::invalid_config, std::string("preprocess.") + key + " must hold numbers");
            out[i] = v[i].get<double>();
        }
    };
    triple("mean", p.mean);
    triple("std", p.std);
    return p;
}

// Parses the header while rejecting duplicate top-level keys.
json parse_header(const std::string& text) {
    std::set<std::string> seen;
    std::string duplicate;
    auto cb = [&](int depth, json::parse_event_t event, json& parsed) {
        if (depth == 1 && event == json::parse_event_t::key) {
            const auto key = parsed.get<std::string>();
            if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
        }
        return true;
    };
    json header;
    try {
        header = json::parse(text, cb);
    } catch (const json::exception& e) {
        fail(Errc::bad_header, std::string("weight header is not valid JSON: ") + e.what());
    }
    if (!duplicate.empty()) fail(Errc::bad_header, "weight header lists '" + duplicate + "' more than once");
    if (!header.is_object()) fail(Errc::bad_header, "weight header must be a JSON object");
    return header;
}

}  // namespace

std::vector<std::uint8_t> encode_weights(const ViTModel& model) {
    validate_model(model);
    const auto tensors = named_tensors(model);
    json header = json::object();
    header["config"] = config_to_json(model.config);
    header["preprocess"] = json{{"mean", model.preprocess.mean}, {"std", model.preprocess.std}};
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        header[name] = json{{"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}};
        offset += 4 * t.size();
    }
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kVtwMagic, kVtwMagic + 4);
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : tensors) {
        for (double v : t.values()) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
        }
    }
    return out;
}

ViTModel decode_weights(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kVtwMagic, 4) != 0) {
        fail(Errc::bad_magic, "not a VTW weight file (bad magic)");
    }
    if (bytes.size() < 12) fail(Errc::truncated, "weight file truncated inside the header length");
    const std::uint64_t header_len = get_u64(bytes.data() + 4);
    if (header_len > bytes.size() - 12) fail(Errc::truncated, "weight file truncated inside the JSON header");
    const std::string text(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    const json header = parse_header(text);

    if (!header.contains("config")) fail(Errc::invalid_config, "weight header lacks a 'config' object");
    const ViTConfig config = config_from_json(header["config"]);
    const Preprocess preprocess = preprocess_from_json(header.contains("preprocess") ? header["preprocess"] : json());

    const std::uint8_t* data = bytes.data() + 12 + header_len;
    const std::uint64_t data_len = bytes.size() - 12 - header_len;

    struct Span {
        std::uint64_t begin, end;
        std::string name;
    };
    std::vector<Span> spans;
    std::map<std::string, Tensor> tensors;
    const auto required = required_tensor_shapes(config, config.n_classes > 0);
    for (const auto& [name, entry] : header.items()) {
        if (name == "config" || name == "preprocess") continue;
        if (!required.contains(name)) fail(Errc::bad_header, "unexpected tensor '" + name + "' for this config");
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") || !entry.contains("offset")) {
            fail(Errc::bad_header, "tensor '" + name + "' needs dtype, shape and offset");
        }
        if (entry["dtype"] != "f32") fail(Errc::bad_header, "tensor '" + name + "' has unsupported dtype");
        Shape shape;
        for (const auto& e : entry["shape"]) {
            if (!e.is_number_unsigned()) fail(Errc::bad_header, "tensor '" + name + "' has a malformed shape");
            shape.push_back(e.get<std::size_t>());
        }
        if (!entry["offset"].is_number_unsigned()) fail(Errc::bad_header, "tensor '" + name + "' has a malformed offset");
        const std::uint64_t offset = entry["offset"].get<std::uint64_t>();
        if (offset % 4 != 0) fail(Errc::bad_header, "tensor '" + name + "' offset is not 4-byte aligned");
        const std::uint64_t n = shape_numel(shape);
        if (offset > data_len || n * 4 > data_len - offset) {
            fail(Errc::truncated, "tensor '" + name + "' extends past the end of the file");
        }
        spans.push_back({offset, offset + 4 * n, name});
        std::vector<double> values(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(data[offset + 4 * i + b]) << (8 * b);
            values[i] = static_cast<double>(std::bit_cast<float>(bits));
        }
        tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
    }
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].begin < spans[i - 1].end) {
            fail(Errc::bad_header, "tensors '" + spans[i - 1].name + "' and '" + spans[i].name + "' overlap");
        }
    }
    return model_from_tensors(config, preprocess, tensors);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io, "cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io, "cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(Errc::io, "short write to '" + path.string() + "'");
}

void write_weights(const ViTModel& model, const std::filesystem::path& path) {
    write_file_bytes(path, encode_weights(model));
}

ViTModel load_weights(const std::filesystem::path& path) { return decode_weights(read_file_bytes(path)); }

}  // namespace cdam
