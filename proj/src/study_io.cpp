#include "prostlab/study_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace prostlab {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint32_t crc_of(const void* data, std::size_t bytes) {
    return static_cast<std::uint32_t>(
        crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(bytes)));
}

void write_blob(const fs::path& path, const void* data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<char> read_blob(const fs::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("missing file: " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    std::vector<char> buf(bytes);
    in.seekg(0);
    in.read(buf.data(), static_cast<std::streamsize>(bytes));
    if (!in) throw std::runtime_error("read failed: " + path.string());
    return buf;
}

json file_entry(const fs::path& name, const void* data, std::size_t bytes) {
    return json{{"name", name.string()}, {"bytes", bytes}, {"crc32", crc_of(data, bytes)}};
}

json extents_json(std::size_t s, std::size_t h, std::size_t w) { return json::array({s, h, w}); }

std::array<std::size_t, 3> extents_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw std::runtime_error("meta.json: bad extents");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

void check_blob(const json& entry, const std::vector<char>& blob, const fs::path& path) {
    if (blob.size() != entry.at("bytes").get<std::size_t>())
        throw std::runtime_error("extent/metadata mismatch (byte count): " + path.string());
    if (crc_of(blob.data(), blob.size()) != entry.at("crc32").get<std::uint32_t>())
        throw std::runtime_error("checksum mismatch: " + path.string());
}

TensorF load_f32(const fs::path& dir, const json& entry, const std::array<std::size_t, 3>& ext) {
    const fs::path path = dir / entry.at("name").get<std::string>();
    const auto blob = read_blob(path);
    check_blob(entry, blob, path);
    if (blob.size() != TensorND<float>::count({ext[0], ext[1], ext[2]}) * sizeof(float))
        throw std::runtime_error("extent/metadata mismatch: " + path.string());
    TensorF t({ext[0], ext[1], ext[2]});
    std::memcpy(t.data(), blob.data(), blob.size());
    for (float v : t.raw())
        if (!std::isfinite(v)) throw std::runtime_error("non-finite intensity: " + path.string());
    return t;
}

TensorU8 load_u8_mask(const fs::path& dir, const json& entry, const std::array<std::size_t, 3>& ext) {
    const fs::path path = dir / entry.at("name").get<std::string>();
    const auto blob = read_blob(path);
    check_blob(entry, blob, path);
    if (blob.size() != TensorND<std::uint8_t>::count({ext[0], ext[1], ext[2]}))
        throw std::runtime_error("extent/metadata mismatch: " + path.string());
    TensorU8 t({ext[0], ext[1], ext[2]});
    std::memcpy(t.data(), blob.data(), blob.size());
    for (auto v : t.raw())
        if (v > 1) throw std::runtime_error("non-binary mask: " + path.string());
    return t;
}

json volume_meta(const Volume3D& v, const fs::path& file) {
    return json{{"file", file.string()},
                {"extents", extents_json(v.slices(), v.height(), v.width())},
                {"spacing", json::array({v.spacing[0], v.spacing[1], v.spacing[2]})}};
}

}  // namespace

void save_study(const PatientStudy& study, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);

    json meta;
    meta["patient_id"] = study.patient_id;
    json files = json::object();

    auto put_f32 = [&](const std::string& name, const TensorF& t) {
        write_blob(dir / name, t.data(), t.size() * sizeof(float));
        files[name] = file_entry(name, t.data(), t.size() * sizeof(float));
    };
    auto put_u8 = [&](const std::string& name, const TensorU8& t) {
        write_blob(dir / name, t.data(), t.size());
        files[name] = file_entry(name, t.data(), t.size());
    };

    meta["adc"] = volume_meta(study.adc, "adc.f32");
    meta["t2w"] = volume_meta(study.t2w, "t2w.f32");
    put_f32("adc.f32", study.adc.voxels);
    put_f32("t2w.f32", study.t2w.voxels);
    put_u8("prostate_adc.u8", study.prostate_mask_adc.voxels);
    put_u8("prostate_t2w.u8", study.prostate_mask_t2w.voxels);
    meta["prostate_mask_adc"] = "prostate_adc.u8";
    meta["prostate_mask_t2w"] = "prostate_t2w.u8";

    json lesions = json::array();
    for (const auto& lesion : study.lesions) {
        json l{{"lesion_id", lesion.lesion_id}, {"pirads", lesion.pirads}, {"ggg", lesion.ggg}};
        const std::string base = "lesion" + std::to_string(lesion.lesion_id);
        if (lesion.mask_adc) {
            put_u8(base + "_adc.u8", lesion.mask_adc->voxels);
            l["mask_adc"] = base + "_adc.u8";
        } else {
            l["mask_adc"] = nullptr;
        }
        if (lesion.mask_t2w) {
            put_u8(base + "_t2w.u8", lesion.mask_t2w->voxels);
            l["mask_t2w"] = base + "_t2w.u8";
        } else {
            l["mask_t2w"] = nullptr;
        }
        lesions.push_back(std::move(l));
    }
    meta["lesions"] = std::move(lesions);
    meta["files"] = std::move(files);

    std::ofstream out(dir / "meta.json");
    if (!out) throw std::runtime_error("cannot open for write: " + (dir / "meta.json").string());
    out << meta.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + (dir / "meta.json").string());
}

PatientStudy load_study(const fs::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw std::runtime_error("missing file: " + (dir / "meta.json").string());
    json meta = json::parse(in);

    PatientStudy study;
    study.patient_id = meta.at("patient_id").get<std::string>();
    const json& files = meta.at("files");

    auto load_volume = [&](const char* key, Sequence seq) {
        const json& vm = meta.at(key);
        Volume3D vol;
        vol.sequence = seq;
        const auto ext = extents_from(vm.at("extents"));
        if (ext[0] < 1 || ext[1] < 1 || ext[2] < 1)
            throw std::runtime_error("meta.json: degenerate extents");
        const auto& sp = vm.at("spacing");
        vol.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
        vol.voxels = load_f32(dir, files.at(vm.at("file").get<std::string>()), ext);
        return vol;
    };
    study.adc = load_volume("adc", Sequence::ADC);
    study.t2w = load_volume("t2w", Sequence::T2W);

    auto mask_extents = [&](Sequence seq) -> std::array<std::size_t, 3> {
        const Volume3D& v = study.volume(seq);
        return {v.slices(), v.height(), v.width()};
    };
    auto load_mask = [&](const std::string& name, Sequence seq, MaskKind kind) {
        MaskVolume m;
        m.kind = kind;
        m.voxels = load_u8_mask(dir, files.at(name), mask_extents(seq));
        return m;
    };

    study.prostate_mask_adc =
        load_mask(meta.at("prostate_mask_adc").get<std::string>(), Sequence::ADC, MaskKind::Prostate);
    study.prostate_mask_t2w =
        load_mask(meta.at("prostate_mask_t2w").get<std::string>(), Sequence::T2W, MaskKind::Prostate);

    for (const auto& l : meta.at("lesions")) {
        LesionRecord rec;
        rec.lesion_id = l.at("lesion_id").get<int>();
        rec.pirads = l.at("pirads").get<int>();
        rec.ggg = l.at("ggg").get<int>();
        if (rec.pirads < 1 || rec.pirads > 5)
            throw std::runtime_error("meta.json: pirads out of range");
        if (!l.at("mask_adc").is_null())
            rec.mask_adc = load_mask(l["mask_adc"].get<std::string>(), Sequence::ADC, MaskKind::Lesion);
        if (!l.at("mask_t2w").is_null())
            rec.mask_t2w = load_mask(l["mask_t2w"].get<std::string>(), Sequence::T2W, MaskKind::Lesion);
        study.lesions.push_back(std::move(rec));
    }
    return study;
}

void save_manifest(const CohortManifest& manifest, const fs::path& path) {
    json root = json::array();
    for (const auto& e : manifest.entries) {
        json lesions = json::array();
        for (const auto& l : e.lesions)
            lesions.push_back(json{{"lesion_id", l.lesion_id},
                                   {"pirads", l.pirads},
                                   {"ggg", l.ggg},
                                   {"max_dim", l.max_dim}});
        root.push_back(json{{"patient_id", e.patient_id},
                            {"n_lesions", e.n_lesions},
                            {"lesions", std::move(lesions)}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for write: " + path.string());
    out << root.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

CohortManifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing file: " + path.string());
    json root = json::parse(in);
    CohortManifest manifest;
    for (const auto& e : root) {
        ManifestEntry entry;
        entry.patient_id = e.at("patient_id").get<std::string>();
        entry.n_lesions = e.at("n_lesions").get<int>();
        for (const auto& l : e.at("lesions"))
            entry.lesions.push_back({l.at("lesion_id").get<int>(), l.at("pirads").get<int>(),
                                     l.at("ggg").get<int>(), l.at("max_dim").get<int>()});
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

std::vector<fs::path> list_cohort(const fs::path& cohort_dir) {
    std::vector<fs::path> dirs;
    if (fs::exists(cohort_dir / "manifest.json")) {
        const auto manifest = load_manifest(cohort_dir / "manifest.json");
        for (const auto& e : manifest.entries) dirs.push_back(cohort_dir / e.patient_id);
        return dirs;
    }
    for (const auto& entry : fs::directory_iterator(cohort_dir))
        if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

}  // namespace prostlab
