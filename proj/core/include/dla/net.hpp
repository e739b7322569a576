#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include "dla/tensor.hpp"

namespace dla {

// Residual patch classifier. The trunk is conv_layers 3x3 convolutions
// arranged as pre-activation residual blocks of two convs each; a 5x5 input
// convolution precedes the trunk and a global-average-pool + 3-way linear
// layer follows it. Channel width doubles and spatial size halves at each
// stage boundary (the first conv of the boundary block runs at stride 2 and
// the skip becomes a strided 1x1 projection). Patch slices enter as input
// channels; HU values are scaled by 1/1000 before the first convolution.
struct Architecture {
    int conv_layers = 8;    // trunk convs, even; projections and input conv not counted
    int base_channels = 16;
    std::vector<int> stage_boundaries;  // trunk conv indices; empty = thirds of the depth
    int patch_p = 41;
    int patch_s = 5;
    int n_classes = 3;
    int input_kernel = 5;

    std::vector<int> boundaries() const;
    void validate() const;
    bool operator==(const Architecture&) const = default;
};

struct ConvShape {
    int in_ch, out_ch, kernel, stride;
    int h_in, h_out;  // square spatial extent
};

struct NetPlan {
    ConvShape input;
    struct Block {
        ConvShape c1, c2;
        bool has_proj;
        ConvShape proj;
    };
    std::vector<Block> blocks;
    int gap_dim;   // spatial side entering the pool
    int features;  // channels entering the fc layer
};

NetPlan plan_network(const Architecture& arch);

struct ModelParams {
    struct Conv {
        Tensor w;  // (out, in, k, k)
        Tensor b;  // (out)
    };
    struct Block {
        Conv c1, c2;
        bool has_proj = false;
        Conv proj;
    };

    Conv input;
    std::vector<Block> blocks;
    Tensor fc_w;  // (n_classes, features)
    Tensor fc_b;  // (n_classes)

    std::size_t count() const;

    // declaration order; defines checkpoint payload order and the parameter
    // flattening used by the optimizer
    template <class F>
    void for_each_tensor(F&& f) {
        f(input.w); f(input.b);
        for (auto& blk : blocks) {
            f(blk.c1.w); f(blk.c1.b);
            f(blk.c2.w); f(blk.c2.b);
            if (blk.has_proj) { f(blk.proj.w); f(blk.proj.b); }
        }
        f(fc_w); f(fc_b);
    }
    template <class F>
    void for_each_tensor(F&& f) const {
        const_cast<ModelParams*>(this)->for_each_tensor([&](Tensor& t) { f(std::as_const(t)); });
    }
};

using Gradients = ModelParams;

// He-style normal init, N(0, 2/fan_in), biases zero; deterministic in seed
ModelParams init_params(const Architecture& arch, std::uint64_t seed);
ModelParams zeros_like(const Architecture& arch);

// batch laid out (b, s, p, p); writes logits (b, n_classes)
void forward(const Architecture& arch, const ModelParams& params, const double* batch, int b,
             double* logits);

// mean softmax cross-entropy over the batch; grads receives the mean
// gradient (overwritten). Single-threaded and bit-reproducible.
double loss_and_grad(const Architecture& arch, const ModelParams& params, const double* batch,
                     const std::uint8_t* labels, int b, Gradients& grads);

// numerically stable, max-shifted
void softmax_row(const double* logits, int n, double* probs);
// 1-based class code; ties resolve to the lowest code
int argmax_class(const double* probs, int n);

void save_checkpoint(const Architecture& arch, const ModelParams& params,
                     const std::filesystem::path& path);
std::pair<Architecture, ModelParams> load_checkpoint(const std::filesystem::path& path);

// Single-precision forward pass for voxel classification, where throughput
// matters and gradients do not. Mirrors the double engine's fixed chunking,
// so results are bit-identical for a given input regardless of batch
// composition or calling thread. Training math stays double.
class InferenceEngine {
public:
    InferenceEngine(const Architecture& arch, const ModelParams& params);
    ~InferenceEngine();
    InferenceEngine(const InferenceEngine&) = delete;
    InferenceEngine& operator=(const InferenceEngine&) = delete;

    // batch laid out (b, s, p, p), raw HU; writes probabilities (b, n_classes)
    void predict(const float* batch, int b, float* probs) const;
    const Architecture& arch() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace dla
