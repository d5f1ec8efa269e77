#include "sivit/checkpoint.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include <json.hpp>

#include "sivit/errors.hpp"

namespace sivit {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "sivit-ckpt-1";

[[noreturn]] void bad(const std::string& path, const std::string& why) {
    throw IoError("checkpoint " + path + ": " + why);
}

}  // namespace

void save_params(const std::string& path, const std::string& meta_json,
                 const std::vector<std::pair<std::string, Tensor>>& params) {
    json meta;
    try {
        meta = json::parse(meta_json);
    } catch (const json::exception& e) {
        throw ContractError("save_params: meta is not valid JSON: " + std::string(e.what()));
    }
    if (!meta.is_object()) throw ContractError("save_params: meta must be a JSON object");

    json tensors = json::array();
    std::int64_t offset = 0;
    for (const auto& [name, t] : params) {
        if (!t.defined()) throw ContractError("save_params: undefined tensor '" + name + "'");
        json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["offset"] = offset;
        tensors.push_back(std::move(entry));
        offset += t.numel();
    }
    json header;
    header["format"] = kFormat;
    header["meta"] = std::move(meta);
    header["tensors"] = std::move(tensors);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) bad(path, "cannot open for writing");
    out << header.dump() << '\n';
    for (const auto& [name, t] : params) {
        (void)name;
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    }
    out.flush();
    if (!out) bad(path, "write failed");
}

LoadedParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) bad(path, "cannot open");
    std::string line;
    if (!std::getline(in, line) || line.empty()) bad(path, "missing header line");

    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        bad(path, "header is not valid JSON: " + std::string(e.what()));
    }
    if (!header.is_object() || header.value("format", "") != kFormat) {
        bad(path, "unrecognized format marker");
    }
    if (!header.contains("meta") || !header["meta"].is_object() ||
        !header.contains("tensors") || !header["tensors"].is_array()) {
        bad(path, "header missing meta/tensors");
    }

    // Validate the directory: offsets must tile the payload in listed order.
    struct Entry {
        std::string name;
        Shape shape;
        std::int64_t offset;
    };
    std::vector<Entry> entries;
    std::int64_t expect = 0;
    for (const auto& e : header["tensors"]) {
        if (!e.is_object() || !e.contains("name") || !e.contains("shape") || !e.contains("offset")) {
            bad(path, "malformed tensor entry");
        }
        Entry ent;
        ent.name = e["name"].get<std::string>();
        ent.shape = e["shape"].get<Shape>();
        ent.offset = e["offset"].get<std::int64_t>();
        for (int d : ent.shape) {
            if (d <= 0) bad(path, "tensor '" + ent.name + "' has non-positive dimension");
        }
        if (ent.offset != expect) {
            bad(path, "tensor '" + ent.name + "' offset " + std::to_string(ent.offset) +
                          " does not follow the previous tensor (expected " +
                          std::to_string(expect) + ")");
        }
        expect += shape_numel(ent.shape);
        entries.push_back(std::move(ent));
    }

    std::vector<double> payload(static_cast<std::size_t>(expect));
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(double))) {
        bad(path, "payload truncated: expected " + std::to_string(expect) + " values");
    }
    char extra;
    if (in.read(&extra, 1)) bad(path, "trailing bytes after payload");
    for (double v : payload) {
        if (!std::isfinite(v)) bad(path, "payload contains a non-finite value");
    }

    LoadedParams out;
    out.meta_json = header["meta"].dump();
    std::size_t cursor = 0;
    for (auto& ent : entries) {
        const std::size_t count = static_cast<std::size_t>(shape_numel(ent.shape));
        std::vector<double> vals(payload.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 payload.begin() + static_cast<std::ptrdiff_t>(cursor + count));
        out.tensors.emplace_back(ent.name, Tensor::from(ent.shape, std::move(vals)));
        cursor += count;
    }
    return out;
}

}  // namespace sivit
