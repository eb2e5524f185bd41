#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prostlab/tensor.hpp"

namespace prostlab {

enum class Sequence { ADC, T2W };

inline const char* sequence_name(Sequence s) { return s == Sequence::ADC ? "adc" : "t2w"; }

enum class MaskKind { Prostate, Lesion };

// One acquisition of a study: dense intensities as (slices, height, width).
struct Volume3D {
    TensorF voxels;                       // rank 3: S x H x W
    std::array<double, 3> spacing{3.0, 1.0, 1.0};  // mm, informational
    Sequence sequence = Sequence::ADC;

    std::size_t slices() const { return voxels.dim(0); }
    std::size_t height() const { return voxels.dim(1); }
    std::size_t width() const { return voxels.dim(2); }
};

// Binary annotation with the same extents as the volume it annotates.
struct MaskVolume {
    TensorU8 voxels;  // rank 3, values in {0,1}
    MaskKind kind = MaskKind::Lesion;

    std::size_t slices() const { return voxels.dim(0); }
    std::size_t height() const { return voxels.dim(1); }
    std::size_t width() const { return voxels.dim(2); }
    std::size_t positive_count() const {
        std::size_t n = 0;
        for (auto v : voxels.raw()) n += v;
        return n;
    }
};

struct LesionRecord {
    int lesion_id = 0;
    int pirads = 1;  // 1..5
    int ggg = 0;     // Gleason grade group, >= 0
    std::optional<MaskVolume> mask_adc;
    std::optional<MaskVolume> mask_t2w;

    bool has_any_mask() const { return mask_adc.has_value() || mask_t2w.has_value(); }
};

struct PatientStudy {
    std::string patient_id;
    Volume3D adc;
    Volume3D t2w;
    MaskVolume prostate_mask_adc;
    MaskVolume prostate_mask_t2w;
    std::vector<LesionRecord> lesions;

    const Volume3D& volume(Sequence s) const { return s == Sequence::ADC ? adc : t2w; }
    const MaskVolume& prostate_mask(Sequence s) const {
        return s == Sequence::ADC ? prostate_mask_adc : prostate_mask_t2w;
    }
};

// Patient-wise k-fold assignment.
struct FoldSplit {
    int k = 5;
    std::map<std::string, int> assignment;  // patient_id -> fold index
    std::uint64_t seed = 0;

    std::vector<std::string> fold_patients(int fold) const {
        std::vector<std::string> out;
        for (const auto& [id, f] : assignment)
            if (f == fold) out.push_back(id);
        return out;
    }
    std::vector<std::string> train_patients(int fold) const {
        std::vector<std::string> out;
        for (const auto& [id, f] : assignment)
            if (f != fold) out.push_back(id);
        return out;
    }
};

// 1 iff the grade group marks the lesion clinically significant (ggg >= 2).
int derive_significance(const LesionRecord& record);

// Voxelwise union of binary masks, clamped to {0,1}. `extents` defines the
// result shape; every mask must match it. An empty list yields all zeros.
MaskVolume union_masks(const std::vector<MaskVolume>& masks,
                       const std::array<std::size_t, 3>& extents,
                       MaskKind kind = MaskKind::Lesion);

// Deterministic patient-wise split: ids are canonicalized (sorted), shuffled
// by the seeded stream and dealt round-robin, so fold sizes differ by <= 1.
FoldSplit make_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed);

}  // namespace prostlab
