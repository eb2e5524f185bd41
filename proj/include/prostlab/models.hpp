#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>

#include "prostlab/nn.hpp"

namespace prostlab {

enum class ModelKind { XmasNetBinary, XmasNetPirads, UNet3D, ResNet18_3D };

const char* model_kind_name(ModelKind kind);

// Declarative description of one network instance.
struct ModelSpec {
    ModelKind kind = ModelKind::XmasNetBinary;
    int in_channels = 1;
    // (slices, height, width); slices is 1 for the 2D classifiers.
    std::array<std::size_t, 3> input_extent{1, 28, 28};
    int unet_base_width = 32;
    std::uint64_t init_seed = 0;
};

enum class TerminalActivation { Sigmoid, Softmax };

struct LayerShapeRecord {
    std::string name;
    std::string kind;
    std::optional<nn::SpatialSpec> spec;
    std::vector<std::size_t> in_dims;
    std::vector<std::size_t> out_dims;
};

template <typename T>
class Network {
public:
    virtual ~Network() = default;

    // All layers up to (excluding) the terminal activation.
    virtual TensorND<T> forward_logits(const TensorND<T>& x, bool training) = 0;
    // Gradient of the loss w.r.t. the logits, propagated to every parameter.
    virtual TensorND<T> backward_from_logits(const TensorND<T>& dlogits) = 0;

    virtual TerminalActivation terminal() const = 0;
    virtual const ModelSpec& spec() const = 0;

    // Probabilities: sigmoid scores or softmax rows depending on the head.
    TensorND<T> forward(const TensorND<T>& x, bool training = false) {
        TensorND<T> z = forward_logits(x, training);
        return terminal() == TerminalActivation::Sigmoid ? nn::sigmoid(z) : nn::softmax_rows(z);
    }

    std::vector<nn::Param<T>*>& parameters() { return params_; }
    void zero_grads() {
        for (auto* p : params_) p->zero_grad();
    }

    const std::vector<LayerShapeRecord>& layer_records() const { return records_; }

    // BatchNorm running statistics; persisted alongside the parameters.
    std::vector<std::pair<std::string, std::vector<double>*>>& buffers() { return buffers_; }

protected:
    nn::Layer<T>& add(std::string name, std::unique_ptr<nn::Layer<T>> layer) {
        layer->collect_params(params_);
        if (auto* bn = dynamic_cast<nn::BatchNorm<T>*>(layer.get())) {
            buffers_.emplace_back(name + ".running_mean", &bn->running_mean());
            buffers_.emplace_back(name + ".running_var", &bn->running_var());
        }
        layer_names_.push_back(std::move(name));
        layers_.push_back(std::move(layer));
        return *layers_.back();
    }

    // Runs one layer and records its shapes for the shape oracle.
    TensorND<T> run(std::size_t index, const TensorND<T>& x, bool training) {
        TensorND<T> y = layers_[index]->forward(x, training);
        auto& rec = records_[index];
        rec.in_dims = x.dims();
        rec.out_dims = y.dims();
        return y;
    }

    void finalize_records() {
        records_.resize(layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            records_[i].name = layer_names_[i];
            records_[i].kind = layers_[i]->kind();
            records_[i].spec = layers_[i]->spatial_spec();
        }
    }

    std::vector<std::unique_ptr<nn::Layer<T>>> layers_;
    std::vector<std::string> layer_names_;
    std::vector<nn::Param<T>*> params_;
    std::vector<std::pair<std::string, std::vector<double>*>> buffers_;
    std::vector<LayerShapeRecord> records_;
};

// Trunk: two 32-channel convs, pool, two 64-channel convs, pool (kernel 3,
// padding 1, stride 1 everywhere; pools 2/2). Head: dense 1024 -> 256 -> 1
// (sigmoid) or -> 5 (softmax). Accepts (N, C, H, W).
template <typename T>
class XmasNet final : public Network<T> {
public:
    explicit XmasNet(const ModelSpec& spec);

    TensorND<T> forward_logits(const TensorND<T>& x, bool training) override;
    TensorND<T> backward_from_logits(const TensorND<T>& dlogits) override;
    TerminalActivation terminal() const override {
        return spec_.kind == ModelKind::XmasNetBinary ? TerminalActivation::Sigmoid
                                                      : TerminalActivation::Softmax;
    }
    const ModelSpec& spec() const override { return spec_; }
    std::size_t flatten_length() const { return flatten_length_; }

private:
    ModelSpec spec_;
    std::size_t flatten_length_ = 0;
};

// Three analysis levels with channel plan (in->B->2B), (2B->2B->4B),
// (4B->4B->8B), bottom (8B->8B->16B), synthesis mirroring with 2/2
// up-convolutions, skip concatenations and a channel-reducing first conv
// per level, final 1x1x1 conv; voxelwise sigmoid head.
template <typename T>
class UNet3D final : public Network<T> {
public:
    explicit UNet3D(const ModelSpec& spec);

    TensorND<T> forward_logits(const TensorND<T>& x, bool training) override;
    TensorND<T> backward_from_logits(const TensorND<T>& dlogits) override;
    TerminalActivation terminal() const override { return TerminalActivation::Sigmoid; }
    const ModelSpec& spec() const override { return spec_; }

private:
    ModelSpec spec_;
    // Layer indices of structural points (per level) set up at build time.
    struct Wiring;
    std::unique_ptr<Wiring> wiring_;
    std::vector<TensorND<T>> skips_;
    std::vector<std::vector<std::size_t>> skip_dims_;
};

// Stem 7x7x7 (stride 1) to 64 channels, 2/2 max-pool, four stride-one basic
// blocks (A: 64, then B doubling to 128/256/512; three convs per block with
// a shortcut from the first conv's output to the third's), then a 4/2/1
// up-convolution restoring the input extent and two head convs to one
// channel; voxelwise sigmoid.
template <typename T>
class ResNet18_3D final : public Network<T> {
public:
    explicit ResNet18_3D(const ModelSpec& spec);

    TensorND<T> forward_logits(const TensorND<T>& x, bool training) override;
    TensorND<T> backward_from_logits(const TensorND<T>& dlogits) override;
    TerminalActivation terminal() const override { return TerminalActivation::Sigmoid; }
    const ModelSpec& spec() const override { return spec_; }

private:
    ModelSpec spec_;
    struct Wiring;
    std::unique_ptr<Wiring> wiring_;
    std::vector<TensorND<T>> residuals_;
};

template <typename T>
std::unique_ptr<Network<T>> build_model(const ModelSpec& spec);

// Total trainable parameter element count.
template <typename T>
std::size_t param_count(Network<T>& net) {
    std::size_t n = 0;
    for (const auto* p : net.parameters()) n += p->value.size();
    return n;
}

// Checkpoints: <path>.json index (name -> shape/offset) plus <path>.bin of
// little-endian float32 blobs. BatchNorm running stats are included.
template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path_base);

struct WeightLoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> missing_in_file;    // parameters with no entry
    std::vector<std::string> unused_in_file;     // file entries with no parameter
};

// Loads matching names; unknown names are reported, shape mismatches throw.
template <typename T>
WeightLoadReport load_checkpoint(Network<T>& net, const std::filesystem::path& path_base);

using NetworkF = Network<float>;
using NetworkD = Network<double>;

}  // namespace prostlab
