#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "prostlab/volume.hpp"

namespace prostlab {

// On-disk bundle layout (one directory per patient):
//   meta.json              extents, spacing, lesion scores, file names, crc32s
//   adc.f32 / t2w.f32      little-endian float32, C-order, slices-major
//   prostate_<seq>.u8      byte-per-voxel {0,1}
//   lesion<i>_<seq>.u8     byte-per-voxel {0,1}, i = lesion_id
void save_study(const PatientStudy& study, const std::filesystem::path& dir);
PatientStudy load_study(const std::filesystem::path& dir);

// Per-lesion summary recorded in the cohort manifest.
struct ManifestLesion {
    int lesion_id = 0;
    int pirads = 1;
    int ggg = 0;
    int max_dim = 0;  // largest bbox side on the max-area T2W slice
};

struct ManifestEntry {
    std::string patient_id;
    int n_lesions = 0;
    std::vector<ManifestLesion> lesions;
};

struct CohortManifest {
    std::vector<ManifestEntry> entries;
};

void save_manifest(const CohortManifest& manifest, const std::filesystem::path& path);
CohortManifest load_manifest(const std::filesystem::path& path);

// Patient directories of a cohort, ordered by patient id (reads manifest.json
// when present, otherwise scans for meta.json bundles).
std::vector<std::filesystem::path> list_cohort(const std::filesystem::path& cohort_dir);

}  // namespace prostlab
