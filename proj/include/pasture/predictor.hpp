#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pasture/heightmap.hpp"
#include "pasture/rng.hpp"

namespace pasture::nn {

// Dense channel-major tensor (ch x h x w).
struct Tensor {
    int ch = 0;
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c, int hh, int ww) : ch(c), h(hh), w(ww), v(static_cast<std::size_t>(c) * hh * ww, 0.0) {}

    double& at(int c, int y, int x) { return v[(static_cast<std::size_t>(c) * h + y) * w + x]; }
    double at(int c, int y, int x) const { return v[(static_cast<std::size_t>(c) * h + y) * w + x]; }
    std::size_t size() const { return v.size(); }
    void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

// Same-padding 2D convolution, odd kernel, stride 1 or 2. The bias is
// optional so gate convolutions can share a single bias per gate.
struct Conv2d {
    int in_ch = 0;
    int out_ch = 0;
    int k = 3;
    int stride = 1;
    bool with_bias = true;
    std::vector<double> weight;  // [out][in][k][k]
    std::vector<double> bias;    // [out] when with_bias

    void init_shape(int in_channels, int out_channels, int kernel, int stride_, bool bias_);
    Tensor forward(const Tensor& in) const;
    // Accumulates parameter gradients into `grad` and input gradients into
    // `gin` when non-null.
    void backward(const Tensor& in, const Tensor& gout, Tensor* gin, Conv2d& grad) const;
};

// Recurrent cell whose gate transforms are convolutions, with per-channel
// peephole weights on the cell state:
//   i = sig(Wxi*x + Whi*h + wci.c_prev + bi)
//   f = sig(Wxf*x + Whf*h + wcf.c_prev + bf)
//   d = i . tanh(Wxc*x + Whc*h + bc)
//   c = f . c_prev + d
//   o = sig(Wxo*x + Who*h + wco.c + bo)
//   h = o . tanh(c)
struct ConvLstmCell {
    int in_ch = 0;
    int hid_ch = 0;
    int k = 3;
    Conv2d wx_i, wx_f, wx_c, wx_o;  // input convolutions, carry the gate biases
    Conv2d wh_i, wh_f, wh_c, wh_o;  // hidden convolutions, no bias
    std::vector<double> w_ci, w_cf, w_co;  // peephole, one weight per cell channel

    void init_shape(int in_channels, int hidden_channels, int kernel);
};

struct LstmStepCache {
    Tensor x, h_prev, c_prev;
    Tensor i, f, g, o;  // post-activation gates
    Tensor c, tanh_c, h;
};

void lstm_step(const ConvLstmCell& cell, const Tensor& x, const Tensor& h_prev,
               const Tensor& c_prev, LstmStepCache& cache);
// dL/dh and dL/dc for this step in, gradients out (dx, dh_prev, dc_prev).
void lstm_step_backward(const ConvLstmCell& cell, const LstmStepCache& cache, const Tensor& dh,
                        const Tensor& dc, ConvLstmCell& grad, Tensor& dx, Tensor& dh_prev,
                        Tensor& dc_prev);

struct NetworkConfig {
    int hidden_full = 8;   // channels at full resolution
    int hidden_half = 16;  // channels at half resolution
    int kernel = 3;
};

struct NormStats {
    double mean = 0.0;
    double stddev = 1.0;
    bool degenerate = false;  // zero-variance dataset; scaling collapsed to 1
};

NormStats compute_norm_stats(std::span<const HeightMap> maps);
HeightMap normalize(const HeightMap& m, const NormStats& stats);
HeightMap denormalize(const HeightMap& m, const NormStats& stats);

// Two-resolution recurrent encoder-decoder. Spatial stem at full resolution,
// strided copy at half resolution, one ConvLSTM encoder/decoder pair per
// resolution, nearest-neighbor upsample and merge, residual projection to one
// channel. Works on any input dims divisible by two.
struct Network {
    NetworkConfig cfg;
    Conv2d stem;   // 1 -> full
    Conv2d down;   // full -> half, stride 2
    ConvLstmCell enc_full, enc_half, dec_full, dec_half;
    Conv2d merge;  // full+half -> full
    Conv2d proj;   // full -> 1, 1x1
    NormStats norm;

    // Every learnable scalar in fixed file order.
    std::vector<std::pair<double*, std::size_t>> param_spans();
    std::vector<std::pair<const double*, std::size_t>> param_spans() const;
    std::size_t param_count() const;
};

Network make_network(const NetworkConfig& cfg, std::uint64_t seed);

// Per-layer channel keep masks; kept activations are rescaled by 1/(1-p).
// An empty mask means a deterministic pass.
struct DropoutMask {
    double scale = 1.0;
    std::array<std::vector<std::uint8_t>, 5> keep;  // stem, down, dec_full, dec_half, merge

    bool none() const { return keep[0].empty(); }
    static DropoutMask none_mask() { return {}; }
    static DropoutMask sample(const NetworkConfig& cfg, double p, Rng& rng);
};

// Run the encoder over the inputs in time order, then emit one map per input
// recursively from the decoders. Input heights are in mm; outputs are
// denormalized back to mm.
std::vector<HeightMap> forward(const Network& net, std::span<const HeightMap> inputs,
                               const DropoutMask& mask);

// Training sample over dataset indices: alpha inputs at stride delta followed
// by alpha targets at the same stride.
struct SequenceSample {
    std::vector<int> input_indices;
    std::vector<int> target_indices;
    int origin = 0;
    int delta = 1;
};

std::vector<SequenceSample> build_sequences(int dataset_len, int delta, int alpha);

struct TrainHyper {
    double lr = 1e-3;
    double momentum = 0.9;
    int batch = 4;
    int max_epochs = 50;
    int patience = 10;
    double dropout_p = 0.0;
    std::uint64_t seed = 42;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val = 0.0;
    bool stopped_early = false;
};

// Momentum gradient descent on the mean squared error of normalized heights;
// keeps the parameters of the best validation epoch. Throws on a non-finite
// loss.
TrainResult train(Network& net, std::span<const HeightMap> dataset,
                  std::span<const SequenceSample> train_samples,
                  std::span<const SequenceSample> val_samples, const TrainHyper& hyper);

// Normalized-scale MSE and parameter gradients for one sample. The flat
// gradient vector is aligned with param_spans order.
double loss_and_gradients(const Network& net, std::span<const HeightMap> dataset,
                          const SequenceSample& sample, const DropoutMask& mask,
                          std::vector<double>* flat_grads);
double sequence_loss(const Network& net, std::span<const HeightMap> dataset,
                     const SequenceSample& sample, const DropoutMask& mask);

struct PredictionResult {
    std::vector<HeightMap> means;      // mm
    std::vector<HeightMap> variances;  // mm^2, population normalization
    int samples = 0;
    std::vector<std::vector<HeightMap>> raw;  // per pass, when kept
};

// K stochastic passes with channel dropout probability p; per-pass streams
// are derived from the seed so parallel execution matches sequential.
PredictionResult mc_predict(const Network& net, std::span<const HeightMap> inputs, int k, double p,
                            std::uint64_t seed, bool keep_samples = false);

// Versioned binary model file: magic, architecture, normalization, parameters.
void write_model(const std::string& path, const Network& net);
Network read_model(const std::string& path);

}  // namespace pasture::nn
