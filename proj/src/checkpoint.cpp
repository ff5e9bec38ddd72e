#include "parkbev/checkpoint.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

#include "json.hpp"

namespace parkbev {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "PBCKPT1\n";
constexpr size_t kMagicLen = 8;

template <class S>
const char* dtypeName();
template <>
const char* dtypeName<float>() { return "float32"; }
template <>
const char* dtypeName<double>() { return "float64"; }

template <class S>
void saveImpl(const ParamSet<S>& params, const std::string& path) {
    std::vector<const Parameter<S>*> sorted;
    for (const auto& p : params.all()) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const auto* a, const auto* b) { return a->name < b->name; });

    json header;
    header["dtype"] = dtypeName<S>();
    header["tensors"] = json::array();
    for (const auto* p : sorted)
        header["tensors"].push_back({{"name", p->name}, {"shape", p->tensor.shape()}});
    std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write checkpoint: " + path);
    f.write(kMagic, kMagicLen);
    std::uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto* p : sorted)
        f.write(reinterpret_cast<const char*>(p->tensor.data().data()),
                static_cast<std::streamsize>(p->tensor.size() * sizeof(S)));
    if (!f) throw ConfigError("write failed for checkpoint: " + path);
}

template <class S>
void loadImpl(ParamSet<S>& params, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open checkpoint: " + path);
    char magic[kMagicLen];
    f.read(magic, kMagicLen);
    if (!f || std::string(magic, kMagicLen) != kMagic)
        throw ConfigError("not a checkpoint file: " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    f.read(htext.data(), static_cast<std::streamsize>(hlen));
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (header.at("dtype").get<std::string>() != dtypeName<S>())
        throw ConfigError("checkpoint dtype " + header.at("dtype").get<std::string>() +
                          " does not match requested " + dtypeName<S>());

    std::string problems;
    size_t matched = 0;
    for (const auto& entry : header.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        size_t count = shapeSize(shape);
        Parameter<S>* p = params.find(name);
        if (!p) {
            problems += "  checkpoint-only parameter: " + name + " " + shapeStr(shape) + "\n";
            f.seekg(static_cast<std::streamoff>(count * sizeof(S)), std::ios::cur);
            continue;
        }
        if (p->tensor.shape() != shape) {
            problems += "  shape mismatch for " + name + ": model " + shapeStr(p->tensor.shape()) +
                        " vs checkpoint " + shapeStr(shape) + "\n";
            f.seekg(static_cast<std::streamoff>(count * sizeof(S)), std::ios::cur);
            continue;
        }
        f.read(reinterpret_cast<char*>(p->tensor.data().data()),
               static_cast<std::streamsize>(count * sizeof(S)));
        ++matched;
    }
    if (!f) throw ConfigError("truncated checkpoint: " + path);
    if (matched != params.all().size()) {
        for (const auto& p : params.all()) {
            bool found = false;
            for (const auto& entry : header.at("tensors"))
                if (entry.at("name").get<std::string>() == p.name) found = true;
            if (!found) problems += "  model-only parameter: " + p.name + "\n";
        }
    }
    if (!problems.empty())
        throw ConfigError("checkpoint does not match the model configuration:\n" + problems);
}

}  // namespace

void saveCheckpoint(const ParamSet<float>& params, const std::string& path) { saveImpl(params, path); }
void saveCheckpoint(const ParamSet<double>& params, const std::string& path) { saveImpl(params, path); }
void loadCheckpoint(ParamSet<float>& params, const std::string& path) { loadImpl(params, path); }
void loadCheckpoint(ParamSet<double>& params, const std::string& path) { loadImpl(params, path); }

}  // namespace parkbev
