#include <fstream>
#include <nlohmann/json.hpp>

#include "prostlab/models.hpp"

namespace prostlab {
namespace {

using nlohmann::json;

struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset;  // in float32 elements
    std::size_t count;
};

}  // namespace

template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path_base) {
    json index = json::object();
    std::vector<float> blob;

    auto put = [&](const std::string& name, const std::vector<std::size_t>& shape,
                   auto&& read_at) {
        const std::size_t count = TensorND<float>::count(shape);
        index[name] = json{{"shape", shape}, {"offset", blob.size()}, {"count", count}};
        for (std::size_t i = 0; i < count; ++i) blob.push_back(static_cast<float>(read_at(i)));
    };

    for (auto* p : net.parameters())
        put(p->name, p->value.dims(), [&](std::size_t i) { return p->value[i]; });
    for (auto& [name, buf] : net.buffers())
        put(name, {buf->size()}, [&](std::size_t i) { return (*buf)[i]; });

    std::ofstream jout(path_base.string() + ".json");
    if (!jout) throw std::runtime_error("cannot write checkpoint index");
    jout << index.dump(2) << "\n";
    std::ofstream bout(path_base.string() + ".bin", std::ios::binary);
    if (!bout) throw std::runtime_error("cannot write checkpoint blob");
    bout.write(reinterpret_cast<const char*>(blob.data()),
               static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!bout) throw std::runtime_error("checkpoint write failed");
}

template <typename T>
WeightLoadReport load_checkpoint(Network<T>& net, const std::filesystem::path& path_base) {
    std::ifstream jin(path_base.string() + ".json");
    if (!jin) throw std::runtime_error("missing checkpoint index: " + path_base.string() + ".json");
    json index = json::parse(jin);

    std::ifstream bin(path_base.string() + ".bin", std::ios::binary | std::ios::ate);
    if (!bin) throw std::runtime_error("missing checkpoint blob: " + path_base.string() + ".bin");
    const std::size_t nfloats = static_cast<std::size_t>(bin.tellg()) / sizeof(float);
    std::vector<float> blob(nfloats);
    bin.seekg(0);
    bin.read(reinterpret_cast<char*>(blob.data()),
             static_cast<std::streamsize>(nfloats * sizeof(float)));

    WeightLoadReport report;
    std::set<std::string> used;

    auto fetch = [&](const std::string& name, const std::vector<std::size_t>& want_shape,
                     auto&& write_at) -> bool {
        if (!index.contains(name)) {
            report.missing_in_file.push_back(name);
            return false;
        }
        const auto& e = index.at(name);
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        if (shape != want_shape)
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
        const std::size_t offset = e.at("offset").get<std::size_t>();
        const std::size_t count = e.at("count").get<std::size_t>();
        if (offset + count > blob.size())
            throw std::runtime_error("checkpoint blob truncated at '" + name + "'");
        for (std::size_t i = 0; i < count; ++i) write_at(i, blob[offset + i]);
        used.insert(name);
        report.loaded.push_back(name);
        return true;
    };

    for (auto* p : net.parameters())
        fetch(p->name, p->value.dims(), [&](std::size_t i, float v) { p->value[i] = static_cast<T>(v); });
    for (auto& [name, buf] : net.buffers())
        fetch(name, {buf->size()}, [&](std::size_t i, float v) { (*buf)[i] = v; });

    for (auto it = index.begin(); it != index.end(); ++it)
        if (!used.count(it.key())) report.unused_in_file.push_back(it.key());
    return report;
}

template void save_checkpoint<float>(Network<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(Network<double>&, const std::filesystem::path&);
template WeightLoadReport load_checkpoint<float>(Network<float>&, const std::filesystem::path&);
template WeightLoadReport load_checkpoint<double>(Network<double>&, const std::filesystem::path&);

}  // namespace prostlab
