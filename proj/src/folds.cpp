#include <algorithm>
#include <set>
#include <stdexcept>

#include "prostlab/rng.hpp"
#include "prostlab/volume.hpp"

namespace prostlab {

int derive_significance(const LesionRecord& record) {
    if (record.ggg < 0) throw std::invalid_argument("derive_significance: ggg must be >= 0");
    return record.ggg >= 2 ? 1 : 0;
}

MaskVolume union_masks(const std::vector<MaskVolume>& masks,
                       const std::array<std::size_t, 3>& extents,
                       MaskKind kind) {
    MaskVolume out;
    out.kind = kind;
    out.voxels = TensorU8({extents[0], extents[1], extents[2]}, 0);
    for (const auto& m : masks) {
        if (m.slices() != extents[0] || m.height() != extents[1] || m.width() != extents[2])
            throw std::invalid_argument("union_masks: extent mismatch");
        const auto& src = m.voxels.raw();
        auto& dst = out.voxels.raw();
        for (std::size_t i = 0; i < dst.size(); ++i)
            dst[i] = static_cast<std::uint8_t>(dst[i] | (src[i] ? 1 : 0));
    }
    return out;
}

FoldSplit make_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");
    if (static_cast<std::size_t>(k) > patient_ids.size())
        throw std::invalid_argument("make_folds: k exceeds patient count");
    std::set<std::string> unique(patient_ids.begin(), patient_ids.end());
    if (unique.size() != patient_ids.size())
        throw std::invalid_argument("make_folds: duplicate patient ids");

    // Canonical order before the shuffle: the split depends only on the id
    // set, the seed and k, never on caller ordering.
    std::vector<std::string> ids(unique.begin(), unique.end());
    RandomStream rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_index(i);
        std::swap(ids[i - 1], ids[j]);
    }

    FoldSplit split;
    split.k = k;
    split.seed = seed;
    for (std::size_t i = 0; i < ids.size(); ++i)
        split.assignment[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return split;
}

}  // namespace prostlab
