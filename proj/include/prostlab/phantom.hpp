#pragma once

#include <cstdint>
#include <filesystem>

#include "prostlab/study_io.hpp"
#include "prostlab/volume.hpp"

namespace prostlab {

// Synthetic cohort generator. Anatomy is an ellipsoidal prostate with up to
// a few ellipsoidal lesions, rasterized per sequence from one normalized
// geometry; masks are exact level sets of the generative shapes.
//
// Label model (sizes measured as the largest bbox side on the max-area T2W
// slice, i.e. at the 224 in-plane scale):
//   - significance: never below diameter 10; probability ramps 0 -> 1 over
//     [sig_ramp_lo, sig_ramp_hi], so the label is monotone in lesion size
//     and nearly deterministic outside a narrow band;
//   - PIRADS drawn from {1,3,4,5} by diameter quantile (score 2 absent,
//     score 1 rare, 4 and 5 together the majority).
struct PhantomParams {
    std::array<std::size_t, 3> adc_extents{20, 128, 128};
    std::array<std::size_t, 3> t2w_extents{20, 224, 224};

    double prostate_radius_min = 0.18;  // fraction of in-plane width
    double prostate_radius_max = 0.28;
    int lesions_min = 0;
    int lesions_max = 3;
    double lesion_radius_min = 2.0;   // in-plane semi-axis, 224-scale voxels
    double lesion_radius_max = 12.0;

    double background_level = 0.18;
    double prostate_contrast = 0.35;     // vs background
    double lesion_contrast_adc = -0.25;  // vs prostate
    double lesion_contrast_t2w = -0.18;
    double noise_sigma = 0.05;
    double bias_field_amplitude = 0.06;

    double sig_ramp_lo = 14.0;  // diameter where P(significant) leaves 0
    double sig_ramp_hi = 18.0;  // diameter where it reaches 1

    int placement_retries = 200;

    void validate() const;
};

PatientStudy generate_study(std::uint64_t seed, const PhantomParams& params,
                            const std::string& patient_id = "");

// Writes n bundles under out_dir plus manifest.json; returns the manifest.
CohortManifest generate_cohort(int n, std::uint64_t seed, const PhantomParams& params,
                               const std::filesystem::path& out_dir);

}  // namespace prostlab
