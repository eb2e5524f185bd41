#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prostlab/augment.hpp"
#include "prostlab/models.hpp"
#include "prostlab/volume.hpp"

namespace prostlab {

struct OptimSettings {
    double learning_rate = 7e-4;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int epochs = 60;
    std::uint64_t seed = 0;
};

struct TrainHistory {
    std::vector<double> train_loss;    // one entry per epoch
    std::vector<double> val_metric;    // optional, may be empty
    std::vector<double> epoch_seconds;

    void to_csv(const std::filesystem::path& path) const;
};

// Adam with decoupled-from-nothing classic L2: the decay term is added to
// the gradient, matching a loss-side L2 penalty.
template <typename T>
class Adam {
public:
    Adam(std::vector<nn::Param<T>*> params, double lr, double weight_decay)
        : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
        for (auto* p : params_) {
            m_.emplace_back(p->value.dims());
            v_.emplace_back(p->value.dims());
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, t_);
        const double bc2 = 1.0 - std::pow(kBeta2, t_);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = *params_[pi];
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = static_cast<double>(p.grad[i]) + wd_ * static_cast<double>(p.value[i]);
                const double mi = kBeta1 * static_cast<double>(m[i]) + (1.0 - kBeta1) * g;
                const double vi = kBeta2 * static_cast<double>(v[i]) + (1.0 - kBeta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) -
                                            lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + kEps));
            }
        }
    }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

private:
    std::vector<nn::Param<T>*> params_;
    std::vector<TensorND<T>> m_, v_;
    double lr_, wd_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct ClassifSample {
    std::vector<TensorF> channels;  // crop_size x crop_size, one per channel
    int label = 0;                  // binary {0,1} or PIRADS class index 0..4
    std::string patient_id;
    int lesion_id = 0;
};

struct ClassifDataset {
    std::vector<ClassifSample> samples;
    std::size_t crop_size = 0;
    std::size_t input_size = 0;
    int channels = 1;
};

struct SegSample {
    TensorF volume;   // (S, H, W) at the configured extent
    TensorU8 mask;    // same extent
    std::string patient_id;
};

struct SegDataset {
    std::vector<SegSample> samples;
    std::array<std::size_t, 3> extent{};
};

enum class ClassifLoss { Bce, Ce };
enum class SegLoss { Dice, DicePlusBce };

// Shuffled mini-batch Adam over `epochs`; per-sample augmentation when
// params are given, otherwise a single deterministic center crop.
TrainHistory train_classifier(NetworkF& net, const ClassifDataset& dataset,
                              const OptimSettings& settings,
                              const std::optional<Augment2DParams>& augment, ClassifLoss loss);

TrainHistory train_segmenter(NetworkF& net, const SegDataset& dataset,
                             const OptimSettings& settings, SegLoss loss,
                             const std::optional<Augment3DParams>& augment);

struct ClassifEval {
    std::vector<double> scores;       // binary: positive-class probability
    std::vector<int> pred_class;      // pirads: argmax class index 0..4
    std::vector<std::vector<double>> prob_rows;  // pirads: softmax rows
    std::vector<int> labels;
    std::vector<std::string> patient_ids;
    std::vector<int> lesion_ids;
};

ClassifEval evaluate_classifier(NetworkF& net, const ClassifDataset& dataset);

struct SegEval {
    std::vector<double> per_patient_dice;  // threshold 0.5
    std::vector<std::string> patient_ids;
    double mean_dice = 0.0;
};

SegEval evaluate_segmenter(NetworkF& net, const SegDataset& dataset);

// Predicted probability volume for one sample (eval mode); used for the
// report overlays.
TensorF predict_volume(NetworkF& net, const TensorF& volume);

// ---------------------------------------------------------------------------
// Gradient checking (64-bit)
// ---------------------------------------------------------------------------

// Loss evaluated on the logits; fills *dlogits when non-null.
using LogitLoss = std::function<double(const TensorD& logits, TensorD* dlogits)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t n_checked = 0;
};

// Central finite differences over every parameter element of `net` against
// the analytic backward pass, in training mode.
GradCheckReport grad_check(NetworkD& net, const TensorD& input, const LogitLoss& loss,
                           double eps = 1e-5);

}  // namespace prostlab
