#include "prostlab/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "prostlab/geometry.hpp"
#include "prostlab/rng.hpp"

namespace prostlab {
namespace {

constexpr double kPi = 3.14159265358979323846;

// Axis-aligned ellipsoid in normalized [0,1]^3 coordinates (z, y, x).
struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> radius;

    double q(double z, double y, double x) const {
        const double dz = (z - center[0]) / radius[0];
        const double dy = (y - center[1]) / radius[1];
        const double dx = (x - center[2]) / radius[2];
        return std::sqrt(dz * dz + dy * dy + dx * dx);
    }
};

struct BiasWave {
    std::array<double, 3> freq;
    double phase;
    double amplitude;

    double at(double z, double y, double x) const {
        return amplitude * std::cos(2.0 * kPi * (freq[0] * z + freq[1] * y + freq[2] * x) + phase);
    }
};

struct LesionShape {
    Ellipsoid shape;
    double contrast_scale;  // per-lesion multiplier on the sequence contrast
};

// Everything needed to rasterize one patient in any sequence.
struct Anatomy {
    Ellipsoid prostate;
    std::vector<LesionShape> lesions;
    std::vector<BiasWave> bias;
};

double ramp_inside(double q, double edge) {
    // 1 deep inside the shape, fading to 0 at the level set q == 1.
    return std::clamp((1.0 - q) / edge, 0.0, 1.0);
}

TensorU8 rasterize_mask(const Ellipsoid& e, const std::array<std::size_t, 3>& ext) {
    TensorU8 out({ext[0], ext[1], ext[2]}, 0);
    for (std::size_t z = 0; z < ext[0]; ++z) {
        const double nz = (static_cast<double>(z) + 0.5) / static_cast<double>(ext[0]);
        for (std::size_t y = 0; y < ext[1]; ++y) {
            const double ny = (static_cast<double>(y) + 0.5) / static_cast<double>(ext[1]);
            for (std::size_t x = 0; x < ext[2]; ++x) {
                const double nx = (static_cast<double>(x) + 0.5) / static_cast<double>(ext[2]);
                if (e.q(nz, ny, nx) <= 1.0) out.at3(z, y, x) = 1;
            }
        }
    }
    return out;
}

Volume3D rasterize_volume(const Anatomy& anatomy, const PhantomParams& p, Sequence seq,
                          const std::array<std::size_t, 3>& ext, RandomStream noise_rng) {
    Volume3D vol;
    vol.sequence = seq;
    vol.voxels = TensorF({ext[0], ext[1], ext[2]});
    const double lesion_contrast =
        seq == Sequence::ADC ? p.lesion_contrast_adc : p.lesion_contrast_t2w;
    for (std::size_t z = 0; z < ext[0]; ++z) {
        const double nz = (static_cast<double>(z) + 0.5) / static_cast<double>(ext[0]);
        for (std::size_t y = 0; y < ext[1]; ++y) {
            const double ny = (static_cast<double>(y) + 0.5) / static_cast<double>(ext[1]);
            for (std::size_t x = 0; x < ext[2]; ++x) {
                const double nx = (static_cast<double>(x) + 0.5) / static_cast<double>(ext[2]);
                double v = p.background_level;
                for (const auto& wave : anatomy.bias) v += wave.at(nz, ny, nx);
                v += p.prostate_contrast * ramp_inside(anatomy.prostate.q(nz, ny, nx), 0.25);
                for (const auto& lesion : anatomy.lesions)
                    v += lesion_contrast * lesion.contrast_scale *
                         ramp_inside(lesion.shape.q(nz, ny, nx), 0.35);
                v += p.noise_sigma * noise_rng.normal();
                vol.voxels.at3(z, y, x) = static_cast<float>(std::max(v, 0.0));
            }
        }
    }
    return vol;
}

int rasterized_max_dim(const TensorU8& mask_voxels) {
    MaskVolume m;
    m.voxels = mask_voxels;
    const LesionLocation loc = max_area_slice(m);
    return std::max(loc.width, loc.height);
}

}  // namespace

void PhantomParams::validate() const {
    auto positive = [](double v) { return v > 0.0; };
    if (adc_extents[0] < 1 || t2w_extents[0] < 1) throw std::invalid_argument("phantom: empty extents");
    if (!(prostate_radius_min < prostate_radius_max) || !positive(prostate_radius_min))
        throw std::invalid_argument("phantom: bad prostate radius range");
    if (lesions_min < 0 || lesions_max < lesions_min)
        throw std::invalid_argument("phantom: bad lesion count range");
    if (!(lesion_radius_min <= lesion_radius_max) || !positive(lesion_radius_min))
        throw std::invalid_argument("phantom: bad lesion radius range");
    if (noise_sigma < 0.0) throw std::invalid_argument("phantom: negative noise sigma");
    if (!(sig_ramp_lo < sig_ramp_hi) || sig_ramp_lo < 10.0)
        throw std::invalid_argument("phantom: significance ramp must start at >= 10");
}

PatientStudy generate_study(std::uint64_t seed, const PhantomParams& params,
                            const std::string& patient_id) {
    params.validate();
    RandomStream rng(seed);

    Anatomy anatomy;
    anatomy.prostate.center = {0.5 + rng.uniform(-0.05, 0.05), 0.5 + rng.uniform(-0.05, 0.05),
                               0.5 + rng.uniform(-0.05, 0.05)};
    anatomy.prostate.radius = {rng.uniform(0.25, 0.35),
                               rng.uniform(params.prostate_radius_min, params.prostate_radius_max),
                               rng.uniform(params.prostate_radius_min, params.prostate_radius_max)};
    for (int i = 0; i < 3; ++i)
        anatomy.bias.push_back({{rng.uniform(-1.0, 1.0), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)},
                                rng.uniform(0.0, 2.0 * kPi),
                                params.bias_field_amplitude * rng.uniform(0.4, 1.0)});

    const double t2w_hw = static_cast<double>(params.t2w_extents[1]);
    const double t2w_slices = static_cast<double>(params.t2w_extents[0]);
    const int n_lesions =
        static_cast<int>(rng.uniform_int(params.lesions_min, params.lesions_max));

    for (int i = 0; i < n_lesions; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < params.placement_retries && !placed; ++attempt) {
            Ellipsoid les;
            // In-plane semi-axes in 224-scale voxels, slice semi-axis in slices.
            const double ry = rng.uniform(params.lesion_radius_min, params.lesion_radius_max);
            const double rx = rng.uniform(params.lesion_radius_min, params.lesion_radius_max);
            const double rz = rng.uniform(1.0, 3.0);
            les.radius = {rz / t2w_slices, ry / t2w_hw, rx / t2w_hw};
            const auto& pro = anatomy.prostate;
            les.center = {pro.center[0] + rng.uniform(-0.8, 0.8) * pro.radius[0],
                          pro.center[1] + rng.uniform(-0.8, 0.8) * pro.radius[1],
                          pro.center[2] + rng.uniform(-0.8, 0.8) * pro.radius[2]};

            // Containment: scaled distance plus worst-case lesion extent must
            // stay inside the prostate level set.
            const double dist = pro.q(les.center[0], les.center[1], les.center[2]);
            double reach = 0.0;
            for (int a = 0; a < 3; ++a) reach = std::max(reach, les.radius[a] / pro.radius[a]);
            if (dist + reach > 0.92) continue;

            // Keep lesions pairwise disjoint (separated bounding boxes).
            bool overlaps = false;
            for (const auto& other : anatomy.lesions) {
                bool separated = false;
                for (int a = 0; a < 3; ++a) {
                    const double gap = std::abs(les.center[a] - other.shape.center[a]);
                    if (gap > les.radius[a] + other.shape.radius[a] + 0.01) separated = true;
                }
                if (!separated) overlaps = true;
            }
            if (overlaps) continue;

            anatomy.lesions.push_back({les, rng.uniform(0.8, 1.2)});
            placed = true;
        }
        if (!placed) throw std::runtime_error("phantom: lesion placement failed after retries");
    }

    PatientStudy study;
    study.patient_id = patient_id.empty() ? "P" + std::to_string(seed) : patient_id;
    study.adc = rasterize_volume(anatomy, params, Sequence::ADC, params.adc_extents, rng.fork(101));
    study.t2w = rasterize_volume(anatomy, params, Sequence::T2W, params.t2w_extents, rng.fork(102));
    study.adc.spacing = {3.0, 1.75, 1.75};
    study.t2w.spacing = {3.0, 1.0, 1.0};

    study.prostate_mask_adc.kind = MaskKind::Prostate;
    study.prostate_mask_adc.voxels = rasterize_mask(anatomy.prostate, params.adc_extents);
    study.prostate_mask_t2w.kind = MaskKind::Prostate;
    study.prostate_mask_t2w.voxels = rasterize_mask(anatomy.prostate, params.t2w_extents);

    for (std::size_t i = 0; i < anatomy.lesions.size(); ++i) {
        LesionRecord rec;
        rec.lesion_id = static_cast<int>(i + 1);
        MaskVolume adc_mask{rasterize_mask(anatomy.lesions[i].shape, params.adc_extents),
                            MaskKind::Lesion};
        MaskVolume t2w_mask{rasterize_mask(anatomy.lesions[i].shape, params.t2w_extents),
                            MaskKind::Lesion};

        const int max_dim = rasterized_max_dim(t2w_mask.voxels);

        // Significance ramp over the measured diameter; hard zero below it.
        const double p_sig =
            std::clamp((max_dim - params.sig_ramp_lo) / (params.sig_ramp_hi - params.sig_ramp_lo),
                       0.0, 1.0);
        const bool significant = max_dim >= 10 && rng.bernoulli(p_sig);
        if (significant)
            rec.ggg = 2 + static_cast<int>(rng.uniform_int(0, 2));
        else
            rec.ggg = static_cast<int>(rng.uniform_int(0, 1));

        // PIRADS by diameter quantile over {1,3,4,5}: 1 rare, 2 absent,
        // 4 and 5 together the majority.
        const double d_lo = 2.0 * params.lesion_radius_min;
        const double d_hi = 2.0 * params.lesion_radius_max;
        const double quantile = std::clamp((max_dim - d_lo) / (d_hi - d_lo), 0.0, 1.0);
        if (quantile < 0.02)
            rec.pirads = 1;
        else if (quantile < 0.35)
            rec.pirads = 3;
        else if (quantile < 0.70)
            rec.pirads = 4;
        else
            rec.pirads = 5;

        rec.mask_adc = std::move(adc_mask);
        rec.mask_t2w = std::move(t2w_mask);
        study.lesions.push_back(std::move(rec));
    }
    return study;
}

CohortManifest generate_cohort(int n, std::uint64_t seed, const PhantomParams& params,
                               const std::filesystem::path& out_dir) {
    params.validate();
    std::filesystem::create_directories(out_dir);
    RandomStream rng(seed);
    CohortManifest manifest;
    for (int i = 0; i < n; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "P%04d", i);
        const PatientStudy study = generate_study(rng.fork(static_cast<std::uint64_t>(i)).next_u64(),
                                                  params, name);
        save_study(study, out_dir / study.patient_id);

        ManifestEntry entry;
        entry.patient_id = study.patient_id;
        entry.n_lesions = static_cast<int>(study.lesions.size());
        for (const auto& lesion : study.lesions) {
            const int max_dim = lesion.mask_t2w ? rasterized_max_dim(lesion.mask_t2w->voxels) : 0;
            entry.lesions.push_back({lesion.lesion_id, lesion.pirads, lesion.ggg, max_dim});
        }
        manifest.entries.push_back(std::move(entry));
    }
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

}  // namespace prostlab
