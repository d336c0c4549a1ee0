#include "pasture/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace pasture::nn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void add_inplace(Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

Tensor tanh_of(const Tensor& a) {
    Tensor out = a;
    for (double& x : out.v) x = std::tanh(x);
    return out;
}

void check_same_dims(const Tensor& a, const Tensor& b, const char* what) {
    if (a.ch != b.ch || a.h != b.h || a.w != b.w) {
        throw std::runtime_error(std::string("tensor shape mismatch in ") + what);
    }
}

}  // namespace

void Conv2d::init_shape(int in_channels, int out_channels, int kernel, int stride_, bool bias_) {
    if (kernel < 1 || kernel % 2 == 0) {
        throw std::runtime_error("convolution kernel must be odd");
    }
    in_ch = in_channels;
    out_ch = out_channels;
    k = kernel;
    stride = stride_;
    with_bias = bias_;
    weight.assign(static_cast<std::size_t>(out_ch) * in_ch * k * k, 0.0);
    bias.assign(with_bias ? static_cast<std::size_t>(out_ch) : 0, 0.0);
}

Tensor Conv2d::forward(const Tensor& in) const {
    if (in.ch != in_ch) {
        throw std::runtime_error("convolution input channel mismatch");
    }
    if (stride == 2 && (in.h % 2 != 0 || in.w % 2 != 0)) {
        throw std::runtime_error("input dims not divisible by the downsampling factor");
    }
    const int pad = k / 2;
    const int oh = in.h / stride;
    const int ow = in.w / stride;
    Tensor out(out_ch, oh, ow);
    for (int oc = 0; oc < out_ch; ++oc) {
        for (int y = 0; y < oh; ++y) {
            const int cy = y * stride;
            for (int x = 0; x < ow; ++x) {
                const int cx = x * stride;
                double s = with_bias ? bias[static_cast<std::size_t>(oc)] : 0.0;
                for (int ic = 0; ic < in_ch; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = cy + ky - pad;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = cx + kx - pad;
                            if (ix < 0 || ix >= in.w) continue;
                            s += weight[((static_cast<std::size_t>(oc) * in_ch + ic) * k + ky) * k + kx] *
                                 in.at(ic, iy, ix);
                        }
                    }
                }
                out.at(oc, y, x) = s;
            }
        }
    }
    return out;
}

void Conv2d::backward(const Tensor& in, const Tensor& gout, Tensor* gin, Conv2d& grad) const {
    const int pad = k / 2;
    for (int oc = 0; oc < out_ch; ++oc) {
        for (int y = 0; y < gout.h; ++y) {
            const int cy = y * stride;
            for (int x = 0; x < gout.w; ++x) {
                const int cx = x * stride;
                const double g = gout.at(oc, y, x);
                if (with_bias) grad.bias[static_cast<std::size_t>(oc)] += g;
                for (int ic = 0; ic < in_ch; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = cy + ky - pad;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = cx + kx - pad;
                            if (ix < 0 || ix >= in.w) continue;
                            const std::size_t wi =
                                ((static_cast<std::size_t>(oc) * in_ch + ic) * k + ky) * k + kx;
                            grad.weight[wi] += g * in.at(ic, iy, ix);
                            if (gin) gin->at(ic, iy, ix) += g * weight[wi];
                        }
                    }
                }
            }
        }
    }
}

void ConvLstmCell::init_shape(int in_channels, int hidden_channels, int kernel) {
    in_ch = in_channels;
    hid_ch = hidden_channels;
    k = kernel;
    for (Conv2d* c : {&wx_i, &wx_f, &wx_c, &wx_o}) {
        c->init_shape(in_channels, hidden_channels, kernel, 1, true);
    }
    for (Conv2d* c : {&wh_i, &wh_f, &wh_c, &wh_o}) {
        c->init_shape(hidden_channels, hidden_channels, kernel, 1, false);
    }
    w_ci.assign(static_cast<std::size_t>(hidden_channels), 0.0);
    w_cf.assign(static_cast<std::size_t>(hidden_channels), 0.0);
    w_co.assign(static_cast<std::size_t>(hidden_channels), 0.0);
}

namespace {

// a += peephole[ch] * state, broadcast over space
void add_peephole(Tensor& a, const std::vector<double>& peephole, const Tensor& state) {
    for (int c = 0; c < a.ch; ++c) {
        const double w = peephole[static_cast<std::size_t>(c)];
        for (int y = 0; y < a.h; ++y) {
            for (int x = 0; x < a.w; ++x) {
                a.at(c, y, x) += w * state.at(c, y, x);
            }
        }
    }
}

}  // namespace

void lstm_step(const ConvLstmCell& cell, const Tensor& x, const Tensor& h_prev,
               const Tensor& c_prev, LstmStepCache& cache) {
    check_same_dims(h_prev, c_prev, "lstm state");
    cache.x = x;
    cache.h_prev = h_prev;
    cache.c_prev = c_prev;

    Tensor a_i = cell.wx_i.forward(x);
    add_inplace(a_i, cell.wh_i.forward(h_prev));
    add_peephole(a_i, cell.w_ci, c_prev);

    Tensor a_f = cell.wx_f.forward(x);
    add_inplace(a_f, cell.wh_f.forward(h_prev));
    add_peephole(a_f, cell.w_cf, c_prev);

    Tensor a_g = cell.wx_c.forward(x);
    add_inplace(a_g, cell.wh_c.forward(h_prev));

    cache.i = a_i;
    for (double& v : cache.i.v) v = sigmoid(v);
    cache.f = a_f;
    for (double& v : cache.f.v) v = sigmoid(v);
    cache.g = tanh_of(a_g);

    cache.c = Tensor(cell.hid_ch, h_prev.h, h_prev.w);
    for (std::size_t idx = 0; idx < cache.c.v.size(); ++idx) {
        cache.c.v[idx] = cache.f.v[idx] * c_prev.v[idx] + cache.i.v[idx] * cache.g.v[idx];
    }

    Tensor a_o = cell.wx_o.forward(x);
    add_inplace(a_o, cell.wh_o.forward(h_prev));
    add_peephole(a_o, cell.w_co, cache.c);
    cache.o = a_o;
    for (double& v : cache.o.v) v = sigmoid(v);

    cache.tanh_c = tanh_of(cache.c);
    cache.h = Tensor(cell.hid_ch, h_prev.h, h_prev.w);
    for (std::size_t idx = 0; idx < cache.h.v.size(); ++idx) {
        cache.h.v[idx] = cache.o.v[idx] * cache.tanh_c.v[idx];
    }
}

void lstm_step_backward(const ConvLstmCell& cell, const LstmStepCache& cache, const Tensor& dh,
                        const Tensor& dc, ConvLstmCell& grad, Tensor& dx, Tensor& dh_prev,
                        Tensor& dc_prev) {
    const std::size_t n = cache.h.v.size();
    Tensor da_o(cache.h.ch, cache.h.h, cache.h.w);
    Tensor dcc = dc;
    for (std::size_t idx = 0; idx < n; ++idx) {
        const double o = cache.o.v[idx];
        const double tc = cache.tanh_c.v[idx];
        da_o.v[idx] = dh.v[idx] * tc * o * (1.0 - o);
        dcc.v[idx] += dh.v[idx] * o * (1.0 - tc * tc);
    }
    // output-gate peephole reads the fresh cell state
    for (int c = 0; c < dcc.ch; ++c) {
        const double w = cell.w_co[static_cast<std::size_t>(c)];
        for (int y = 0; y < dcc.h; ++y) {
            for (int x = 0; x < dcc.w; ++x) {
                dcc.at(c, y, x) += da_o.at(c, y, x) * w;
            }
        }
    }

    Tensor da_i(dcc.ch, dcc.h, dcc.w);
    Tensor da_f(dcc.ch, dcc.h, dcc.w);
    Tensor da_g(dcc.ch, dcc.h, dcc.w);
    for (std::size_t idx = 0; idx < n; ++idx) {
        const double i = cache.i.v[idx];
        const double f = cache.f.v[idx];
        const double g = cache.g.v[idx];
        da_f.v[idx] = dcc.v[idx] * cache.c_prev.v[idx] * f * (1.0 - f);
        da_i.v[idx] = dcc.v[idx] * g * i * (1.0 - i);
        da_g.v[idx] = dcc.v[idx] * i * (1.0 - g * g);
    }

    dc_prev = Tensor(dcc.ch, dcc.h, dcc.w);
    for (int c = 0; c < dcc.ch; ++c) {
        const double wci = cell.w_ci[static_cast<std::size_t>(c)];
        const double wcf = cell.w_cf[static_cast<std::size_t>(c)];
        double g_ci = 0.0, g_cf = 0.0, g_co = 0.0;
        for (int y = 0; y < dcc.h; ++y) {
            for (int x = 0; x < dcc.w; ++x) {
                dc_prev.at(c, y, x) = dcc.at(c, y, x) * cache.f.at(c, y, x) +
                                      da_i.at(c, y, x) * wci + da_f.at(c, y, x) * wcf;
                g_ci += da_i.at(c, y, x) * cache.c_prev.at(c, y, x);
                g_cf += da_f.at(c, y, x) * cache.c_prev.at(c, y, x);
                g_co += da_o.at(c, y, x) * cache.c.at(c, y, x);
            }
        }
        grad.w_ci[static_cast<std::size_t>(c)] += g_ci;
        grad.w_cf[static_cast<std::size_t>(c)] += g_cf;
        grad.w_co[static_cast<std::size_t>(c)] += g_co;
    }

    dx = Tensor(cache.x.ch, cache.x.h, cache.x.w);
    dh_prev = Tensor(cache.h_prev.ch, cache.h_prev.h, cache.h_prev.w);
    cell.wx_i.backward(cache.x, da_i, &dx, grad.wx_i);
    cell.wh_i.backward(cache.h_prev, da_i, &dh_prev, grad.wh_i);
    cell.wx_f.backward(cache.x, da_f, &dx, grad.wx_f);
    cell.wh_f.backward(cache.h_prev, da_f, &dh_prev, grad.wh_f);
    cell.wx_c.backward(cache.x, da_g, &dx, grad.wx_c);
    cell.wh_c.backward(cache.h_prev, da_g, &dh_prev, grad.wh_c);
    cell.wx_o.backward(cache.x, da_o, &dx, grad.wx_o);
    cell.wh_o.backward(cache.h_prev, da_o, &dh_prev, grad.wh_o);
}

NormStats compute_norm_stats(std::span<const HeightMap> maps) {
    if (maps.empty()) {
        throw std::runtime_error("cannot compute normalization over an empty dataset");
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (const HeightMap& m : maps) {
        for (double v : m.values) sum += v;
        n += m.size();
    }
    NormStats stats;
    stats.mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const HeightMap& m : maps) {
        for (double v : m.values) ss += (v - stats.mean) * (v - stats.mean);
    }
    const double var = ss / static_cast<double>(n);
    if (var > 0.0) {
        stats.stddev = std::sqrt(var);
    } else {
        stats.stddev = 1.0;
        stats.degenerate = true;
    }
    return stats;
}

HeightMap normalize(const HeightMap& m, const NormStats& stats) {
    HeightMap out = m;
    for (double& v : out.values) v = (v - stats.mean) / stats.stddev;
    return out;
}

HeightMap denormalize(const HeightMap& m, const NormStats& stats) {
    HeightMap out = m;
    for (double& v : out.values) v = v * stats.stddev + stats.mean;
    return out;
}

std::vector<std::pair<double*, std::size_t>> Network::param_spans() {
    std::vector<std::pair<double*, std::size_t>> spans;
    auto add_conv = [&](Conv2d& c) {
        spans.emplace_back(c.weight.data(), c.weight.size());
        if (c.with_bias) spans.emplace_back(c.bias.data(), c.bias.size());
    };
    auto add_cell = [&](ConvLstmCell& cell) {
        add_conv(cell.wx_i);
        add_conv(cell.wh_i);
        add_conv(cell.wx_f);
        add_conv(cell.wh_f);
        add_conv(cell.wx_c);
        add_conv(cell.wh_c);
        add_conv(cell.wx_o);
        add_conv(cell.wh_o);
        spans.emplace_back(cell.w_ci.data(), cell.w_ci.size());
        spans.emplace_back(cell.w_cf.data(), cell.w_cf.size());
        spans.emplace_back(cell.w_co.data(), cell.w_co.size());
    };
    add_conv(stem);
    add_conv(down);
    add_cell(enc_full);
    add_cell(enc_half);
    add_cell(dec_full);
    add_cell(dec_half);
    add_conv(merge);
    add_conv(proj);
    return spans;
}

std::vector<std::pair<const double*, std::size_t>> Network::param_spans() const {
    auto spans = const_cast<Network*>(this)->param_spans();
    std::vector<std::pair<const double*, std::size_t>> out;
    out.reserve(spans.size());
    for (auto& [p, len] : spans) out.emplace_back(p, len);
    return out;
}

std::size_t Network::param_count() const {
    std::size_t n = 0;
    for (auto& [p, len] : param_spans()) n += len;
    return n;
}

namespace {

Network make_network_shell(const NetworkConfig& cfg) {
    if (cfg.hidden_full < 1 || cfg.hidden_half < 1) {
        throw std::runtime_error("hidden channel counts must be positive");
    }
    if (cfg.kernel < 1 || cfg.kernel % 2 == 0) {
        throw std::runtime_error("kernel size must be odd");
    }
    Network net;
    net.cfg = cfg;
    net.stem.init_shape(1, cfg.hidden_full, cfg.kernel, 1, true);
    net.down.init_shape(cfg.hidden_full, cfg.hidden_half, cfg.kernel, 2, true);
    net.enc_full.init_shape(cfg.hidden_full, cfg.hidden_full, cfg.kernel);
    net.enc_half.init_shape(cfg.hidden_half, cfg.hidden_half, cfg.kernel);
    net.dec_full.init_shape(cfg.hidden_full, cfg.hidden_full, cfg.kernel);
    net.dec_half.init_shape(cfg.hidden_half, cfg.hidden_half, cfg.kernel);
    net.merge.init_shape(cfg.hidden_full + cfg.hidden_half, cfg.hidden_full, cfg.kernel, 1, true);
    net.proj.init_shape(cfg.hidden_full, 1, 1, 1, true);
    return net;
}

}  // namespace

Network make_network(const NetworkConfig& cfg, std::uint64_t seed) {
    Network net = make_network_shell(cfg);
    Rng rng = stream_rng(seed, stream::param_init);
    auto init_conv = [&](Conv2d& c) {
        const double bound = std::sqrt(1.0 / (static_cast<double>(c.in_ch) * c.k * c.k));
        for (double& w : c.weight) w = rng.uniform(-bound, bound);
        for (double& b : c.bias) b = 0.0;
    };
    auto init_cell = [&](ConvLstmCell& cell) {
        for (Conv2d* c : {&cell.wx_i, &cell.wh_i, &cell.wx_f, &cell.wh_f, &cell.wx_c, &cell.wh_c,
                          &cell.wx_o, &cell.wh_o}) {
            init_conv(*c);
        }
        // forget-gate bias starts positive so early gradients flow through time
        for (double& b : cell.wx_f.bias) b = 1.0;
        const double pb = std::sqrt(1.0 / static_cast<double>(cell.hid_ch));
        for (double& w : cell.w_ci) w = rng.uniform(-pb, pb);
        for (double& w : cell.w_cf) w = rng.uniform(-pb, pb);
        for (double& w : cell.w_co) w = rng.uniform(-pb, pb);
    };
    init_conv(net.stem);
    init_conv(net.down);
    init_cell(net.enc_full);
    init_cell(net.enc_half);
    init_cell(net.dec_full);
    init_cell(net.dec_half);
    init_conv(net.merge);
    init_conv(net.proj);
    return net;
}

DropoutMask DropoutMask::sample(const NetworkConfig& cfg, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw std::runtime_error("dropout probability must lie in [0, 1)");
    }
    DropoutMask mask;
    mask.scale = 1.0 / (1.0 - p);
    const int sizes[5] = {cfg.hidden_full, cfg.hidden_half, cfg.hidden_full, cfg.hidden_half,
                          cfg.hidden_full};
    for (int s = 0; s < 5; ++s) {
        mask.keep[static_cast<std::size_t>(s)].resize(static_cast<std::size_t>(sizes[s]));
        for (int c = 0; c < sizes[s]; ++c) {
            mask.keep[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] =
                rng.uniform01() >= p ? 1 : 0;
        }
    }
    return mask;
}

namespace {

Tensor apply_mask(const Tensor& in, const DropoutMask& mask, int site) {
    if (mask.none()) return in;
    Tensor out = in;
    const auto& keep = mask.keep[static_cast<std::size_t>(site)];
    for (int c = 0; c < in.ch; ++c) {
        const double m = keep[static_cast<std::size_t>(c)] ? mask.scale : 0.0;
        for (int y = 0; y < in.h; ++y) {
            for (int x = 0; x < in.w; ++x) {
                out.at(c, y, x) = in.at(c, y, x) * m;
            }
        }
    }
    return out;
}

Tensor mask_backward(const Tensor& gout, const DropoutMask& mask, int site) {
    return apply_mask(gout, mask, site);
}

Tensor upsample2(const Tensor& in, int oh, int ow) {
    Tensor out(in.ch, oh, ow);
    for (int c = 0; c < in.ch; ++c) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                out.at(c, y, x) = in.at(c, y / 2, x / 2);
            }
        }
    }
    return out;
}

Tensor downsample_sum(const Tensor& gout) {
    Tensor out(gout.ch, gout.h / 2, gout.w / 2);
    for (int c = 0; c < gout.ch; ++c) {
        for (int y = 0; y < gout.h; ++y) {
            for (int x = 0; x < gout.w; ++x) {
                out.at(c, y / 2, x / 2) += gout.at(c, y, x);
            }
        }
    }
    return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor out(a.ch + b.ch, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
    return out;
}

struct EncStepCache {
    Tensor x_in;
    Tensor stem_act, stem_dropped;
    Tensor down_act, down_dropped;
    LstmStepCache full, half;
};

struct DecStepCache {
    LstmStepCache full, half;
    Tensor hf_dropped, hh_dropped;
    Tensor cat;
    Tensor merge_act, merge_dropped;
    Tensor proj_in;
    Tensor y;
};

struct ForwardPass {
    std::vector<EncStepCache> enc;
    std::vector<DecStepCache> dec;
    int h = 0;
    int w = 0;
};

void run_forward(const Network& net, const std::vector<Tensor>& inputs, const DropoutMask& mask,
                 ForwardPass& pass) {
    const int alpha = static_cast<int>(inputs.size());
    if (alpha < 1) {
        throw std::runtime_error("forward pass needs at least one input map");
    }
    const int h = inputs[0].h;
    const int w = inputs[0].w;
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::runtime_error("input dims not divisible by the downsampling factor");
    }
    pass.h = h;
    pass.w = w;
    pass.enc.resize(static_cast<std::size_t>(alpha));
    pass.dec.resize(static_cast<std::size_t>(alpha));

    const int c1 = net.cfg.hidden_full;
    const int c2 = net.cfg.hidden_half;
    Tensor h_f(c1, h, w), c_f(c1, h, w);
    Tensor h_h(c2, h / 2, w / 2), c_h(c2, h / 2, w / 2);

    for (int t = 0; t < alpha; ++t) {
        EncStepCache& ec = pass.enc[static_cast<std::size_t>(t)];
        if (inputs[static_cast<std::size_t>(t)].h != h || inputs[static_cast<std::size_t>(t)].w != w) {
            throw std::runtime_error("input maps must share dimensions");
        }
        ec.x_in = inputs[static_cast<std::size_t>(t)];
        ec.stem_act = tanh_of(net.stem.forward(ec.x_in));
        ec.stem_dropped = apply_mask(ec.stem_act, mask, 0);
        ec.down_act = tanh_of(net.down.forward(ec.stem_dropped));
        ec.down_dropped = apply_mask(ec.down_act, mask, 1);
        lstm_step(net.enc_full, ec.stem_dropped, h_f, c_f, ec.full);
        h_f = ec.full.h;
        c_f = ec.full.c;
        lstm_step(net.enc_half, ec.down_dropped, h_h, c_h, ec.half);
        h_h = ec.half.h;
        c_h = ec.half.c;
    }

    // Decoders start from the encoder states and are conditioned on the most
    // recent observation's feature maps at every step; the recursion lives in
    // the hidden and cell states.
    const Tensor& cond_full = pass.enc.back().stem_dropped;
    const Tensor& cond_half = pass.enc.back().down_dropped;
    for (int t = 0; t < alpha; ++t) {
        DecStepCache& dc = pass.dec[static_cast<std::size_t>(t)];
        lstm_step(net.dec_full, cond_full, h_f, c_f, dc.full);
        h_f = dc.full.h;
        c_f = dc.full.c;
        lstm_step(net.dec_half, cond_half, h_h, c_h, dc.half);
        h_h = dc.half.h;
        c_h = dc.half.c;

        dc.hf_dropped = apply_mask(h_f, mask, 2);
        dc.hh_dropped = apply_mask(h_h, mask, 3);
        dc.cat = concat_channels(dc.hf_dropped, upsample2(dc.hh_dropped, h, w));
        dc.merge_act = tanh_of(net.merge.forward(dc.cat));
        dc.merge_dropped = apply_mask(dc.merge_act, mask, 4);
        dc.proj_in = dc.hf_dropped;
        add_inplace(dc.proj_in, dc.merge_dropped);
        dc.y = net.proj.forward(dc.proj_in);
    }
}

Network zero_like(const Network& net) {
    Network g = make_network_shell(net.cfg);
    return g;
}

void run_backward(const Network& net, const ForwardPass& pass, const std::vector<Tensor>& dys,
                  const DropoutMask& mask, Network& grad) {
    const int alpha = static_cast<int>(pass.dec.size());
    const int c1 = net.cfg.hidden_full;
    const int c2 = net.cfg.hidden_half;
    const int h = pass.h;
    const int w = pass.w;

    Tensor dh_f(c1, h, w), dc_f(c1, h, w);
    Tensor dh_h(c2, h / 2, w / 2), dc_h(c2, h / 2, w / 2);
    // gradients w.r.t. the conditioning features, accumulated over all steps
    Tensor dcond_full(c1, h, w), dcond_half(c2, h / 2, w / 2);

    for (int t = alpha - 1; t >= 0; --t) {
        const DecStepCache& dc = pass.dec[static_cast<std::size_t>(t)];
        Tensor dproj_in(c1, h, w);
        net.proj.backward(dc.proj_in, dys[static_cast<std::size_t>(t)], &dproj_in, grad.proj);

        // residual split: projection input is dec-full hidden plus merge output
        Tensor dmerge_pre = mask_backward(dproj_in, mask, 4);
        for (std::size_t idx = 0; idx < dmerge_pre.v.size(); ++idx) {
            const double a = dc.merge_act.v[idx];
            dmerge_pre.v[idx] *= (1.0 - a * a);
        }
        Tensor dcat(c1 + c2, h, w);
        net.merge.backward(dc.cat, dmerge_pre, &dcat, grad.merge);

        Tensor dhf_dropped = dproj_in;
        Tensor dup(c2, h, w);
        for (int c = 0; c < c1; ++c) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    dhf_dropped.at(c, y, x) += dcat.at(c, y, x);
                }
            }
        }
        for (int c = 0; c < c2; ++c) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    dup.at(c, y, x) = dcat.at(c1 + c, y, x);
                }
            }
        }
        Tensor dhh_dropped = downsample_sum(dup);

        Tensor dh_f_total = mask_backward(dhf_dropped, mask, 2);
        add_inplace(dh_f_total, dh_f);
        Tensor dh_h_total = mask_backward(dhh_dropped, mask, 3);
        add_inplace(dh_h_total, dh_h);

        Tensor dx, dh_prev, dc_prev;
        lstm_step_backward(net.dec_full, dc.full, dh_f_total, dc_f, grad.dec_full, dx, dh_prev,
                           dc_prev);
        add_inplace(dcond_full, dx);
        dh_f = dh_prev;
        dc_f = dc_prev;

        lstm_step_backward(net.dec_half, dc.half, dh_h_total, dc_h, grad.dec_half, dx, dh_prev,
                           dc_prev);
        add_inplace(dcond_half, dx);
        dh_h = dh_prev;
        dc_h = dc_prev;
    }

    for (int t = alpha - 1; t >= 0; --t) {
        const EncStepCache& ec = pass.enc[static_cast<std::size_t>(t)];
        Tensor dx_full, dh_prev, dc_prev;
        lstm_step_backward(net.enc_full, ec.full, dh_f, dc_f, grad.enc_full, dx_full, dh_prev,
                           dc_prev);
        dh_f = dh_prev;
        dc_f = dc_prev;

        Tensor dx_half;
        lstm_step_backward(net.enc_half, ec.half, dh_h, dc_h, grad.enc_half, dx_half, dh_prev,
                           dc_prev);
        dh_h = dh_prev;
        dc_h = dc_prev;

        // the final observation's features also condition the decoders
        if (t == alpha - 1) {
            add_inplace(dx_full, dcond_full);
            add_inplace(dx_half, dcond_half);
        }

        // half branch feeds back through the downsampling convolution
        Tensor ddown_pre = mask_backward(dx_half, mask, 1);
        for (std::size_t idx = 0; idx < ddown_pre.v.size(); ++idx) {
            const double a = ec.down_act.v[idx];
            ddown_pre.v[idx] *= (1.0 - a * a);
        }
        Tensor dstem_dropped(c1, h, w);
        net.down.backward(ec.stem_dropped, ddown_pre, &dstem_dropped, grad.down);
        add_inplace(dstem_dropped, dx_full);

        Tensor dstem_pre = mask_backward(dstem_dropped, mask, 0);
        for (std::size_t idx = 0; idx < dstem_pre.v.size(); ++idx) {
            const double a = ec.stem_act.v[idx];
            dstem_pre.v[idx] *= (1.0 - a * a);
        }
        net.stem.backward(ec.x_in, dstem_pre, nullptr, grad.stem);
    }
}

Tensor map_to_tensor(const HeightMap& m, const NormStats& stats) {
    Tensor t(1, m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            t.at(0, y, x) = (m.at(y, x) - stats.mean) / stats.stddev;
        }
    }
    return t;
}

void flatten_grads(Network& grad, std::vector<double>& flat) {
    flat.clear();
    for (auto& [p, len] : grad.param_spans()) {
        flat.insert(flat.end(), p, p + len);
    }
}

}  // namespace

std::vector<HeightMap> forward(const Network& net, std::span<const HeightMap> inputs,
                               const DropoutMask& mask) {
    std::vector<Tensor> xs;
    xs.reserve(inputs.size());
    for (const HeightMap& m : inputs) xs.push_back(map_to_tensor(m, net.norm));
    ForwardPass pass;
    run_forward(net, xs, mask, pass);
    std::vector<HeightMap> out;
    out.reserve(pass.dec.size());
    for (const DecStepCache& dc : pass.dec) {
        HeightMap m(pass.h, pass.w);
        for (int y = 0; y < pass.h; ++y) {
            for (int x = 0; x < pass.w; ++x) {
                m.at(y, x) = dc.y.at(0, y, x) * net.norm.stddev + net.norm.mean;
            }
        }
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<SequenceSample> build_sequences(int dataset_len, int delta, int alpha) {
    if (delta < 1 || alpha < 1) {
        throw std::runtime_error("stride and window count must be at least 1");
    }
    if (dataset_len < 2 * alpha * delta) {
        throw std::runtime_error("dataset too short: need at least " +
                                 std::to_string(2 * alpha * delta) + " maps");
    }
    std::vector<SequenceSample> samples;
    for (int origin = 0; origin + (2 * alpha - 1) * delta < dataset_len; ++origin) {
        SequenceSample s;
        s.origin = origin;
        s.delta = delta;
        for (int j = 0; j < alpha; ++j) s.input_indices.push_back(origin + j * delta);
        for (int j = 0; j < alpha; ++j) s.target_indices.push_back(origin + (alpha + j) * delta);
        samples.push_back(std::move(s));
    }
    return samples;
}

namespace {

double loss_core(const Network& net, std::span<const HeightMap> dataset,
                 const SequenceSample& sample, const DropoutMask& mask, Network* grad_out) {
    std::vector<Tensor> xs;
    xs.reserve(sample.input_indices.size());
    for (int idx : sample.input_indices) {
        xs.push_back(map_to_tensor(dataset[static_cast<std::size_t>(idx)], net.norm));
    }
    ForwardPass pass;
    run_forward(net, xs, mask, pass);

    const int alpha = static_cast<int>(sample.target_indices.size());
    const double denom = static_cast<double>(alpha) * pass.h * pass.w;
    double loss = 0.0;
    std::vector<Tensor> dys(static_cast<std::size_t>(alpha));
    for (int t = 0; t < alpha; ++t) {
        const HeightMap& target = dataset[static_cast<std::size_t>(sample.target_indices[t])];
        Tensor& dy = dys[static_cast<std::size_t>(t)];
        dy = Tensor(1, pass.h, pass.w);
        const Tensor& y = pass.dec[static_cast<std::size_t>(t)].y;
        for (int r = 0; r < pass.h; ++r) {
            for (int c = 0; c < pass.w; ++c) {
                const double tn = (target.at(r, c) - net.norm.mean) / net.norm.stddev;
                const double diff = y.at(0, r, c) - tn;
                loss += diff * diff;
                dy.at(0, r, c) = 2.0 * diff / denom;
            }
        }
    }
    loss /= denom;
    if (grad_out) {
        run_backward(net, pass, dys, mask, *grad_out);
    }
    return loss;
}

}  // namespace

double sequence_loss(const Network& net, std::span<const HeightMap> dataset,
                     const SequenceSample& sample, const DropoutMask& mask) {
    return loss_core(net, dataset, sample, mask, nullptr);
}

double loss_and_gradients(const Network& net, std::span<const HeightMap> dataset,
                          const SequenceSample& sample, const DropoutMask& mask,
                          std::vector<double>* flat_grads) {
    Network grad = zero_like(net);
    const double loss = loss_core(net, dataset, sample, mask, &grad);
    if (flat_grads) flatten_grads(grad, *flat_grads);
    return loss;
}

TrainResult train(Network& net, std::span<const HeightMap> dataset,
                  std::span<const SequenceSample> train_samples,
                  std::span<const SequenceSample> val_samples, const TrainHyper& hyper) {
    if (train_samples.empty() || val_samples.empty()) {
        throw std::runtime_error("training needs at least one training and one validation sample");
    }
    if (hyper.batch < 1 || hyper.max_epochs < 1 || hyper.patience < 1) {
        throw std::runtime_error("bad training hyperparameters");
    }

    // Normalization statistics come from the training maps only.
    std::set<int> train_map_ids;
    for (const SequenceSample& s : train_samples) {
        train_map_ids.insert(s.input_indices.begin(), s.input_indices.end());
        train_map_ids.insert(s.target_indices.begin(), s.target_indices.end());
    }
    std::vector<HeightMap> train_maps;
    train_maps.reserve(train_map_ids.size());
    for (int idx : train_map_ids) train_maps.push_back(dataset[static_cast<std::size_t>(idx)]);
    net.norm = compute_norm_stats(train_maps);

    auto spans = net.param_spans();
    std::size_t total = 0;
    for (auto& [p, len] : spans) total += len;
    std::vector<double> velocity(total, 0.0);

    TrainResult result;
    Network best = net;
    double best_val = std::numeric_limits<double>::infinity();
    int stagnant = 0;

    std::vector<int> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        Rng shuffle_rng = stream_rng(hyper.seed, stream::shuffle, static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        }

        double train_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
            const int batch_n = static_cast<int>(end - start);
            std::vector<std::vector<double>> grads(static_cast<std::size_t>(batch_n));
            std::vector<double> losses(static_cast<std::size_t>(batch_n), 0.0);

#pragma omp parallel for schedule(static)
            for (int b = 0; b < batch_n; ++b) {
                const int sample_pos = static_cast<int>(start) + b;
                const SequenceSample& s = train_samples[static_cast<std::size_t>(order[static_cast<std::size_t>(sample_pos)])];
                DropoutMask mask = DropoutMask::none_mask();
                if (hyper.dropout_p > 0.0) {
                    Rng mask_rng = stream_rng(hyper.seed, stream::dropout_mask,
                                              static_cast<std::uint64_t>(epoch) * 1000003ULL +
                                                  static_cast<std::uint64_t>(sample_pos));
                    mask = DropoutMask::sample(net.cfg, hyper.dropout_p, mask_rng);
                }
                losses[static_cast<std::size_t>(b)] =
                    loss_and_gradients(net, dataset, s, mask, &grads[static_cast<std::size_t>(b)]);
            }

            // fixed-order reduction keeps updates independent of thread count
            std::vector<double> grad_sum(total, 0.0);
            for (int b = 0; b < batch_n; ++b) {
                train_loss += losses[static_cast<std::size_t>(b)];
                for (std::size_t i = 0; i < total; ++i) {
                    grad_sum[i] += grads[static_cast<std::size_t>(b)][i];
                }
            }

            std::size_t offset = 0;
            for (auto& [p, len] : spans) {
                for (std::size_t i = 0; i < len; ++i) {
                    const double g = grad_sum[offset + i] / static_cast<double>(batch_n);
                    velocity[offset + i] = hyper.momentum * velocity[offset + i] - hyper.lr * g;
                    p[i] += velocity[offset + i];
                }
                offset += len;
            }
        }
        train_loss /= static_cast<double>(order.size());

        double val_loss = 0.0;
        for (const SequenceSample& s : val_samples) {
            val_loss += sequence_loss(net, dataset, s, DropoutMask::none_mask());
        }
        val_loss /= static_cast<double>(val_samples.size());

        if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
            throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                     std::to_string(epoch + 1));
        }
        result.history.push_back({train_loss, val_loss});

        if (val_loss < best_val) {
            best_val = val_loss;
            best = net;
            result.best_epoch = epoch;
            stagnant = 0;
        } else {
            ++stagnant;
            if (stagnant >= hyper.patience) {
                result.stopped_early = true;
                break;
            }
        }
    }

    net = best;
    result.best_val = best_val;
    return result;
}

PredictionResult mc_predict(const Network& net, std::span<const HeightMap> inputs, int k, double p,
                            std::uint64_t seed, bool keep_samples) {
    if (k < 1) {
        throw std::runtime_error("sample count must be at least 1");
    }
    if (p < 0.0 || p >= 1.0) {
        throw std::runtime_error("dropout probability must lie in [0, 1)");
    }
    const int alpha = static_cast<int>(inputs.size());
    std::vector<std::vector<HeightMap>> raw(static_cast<std::size_t>(k));

#pragma omp parallel for schedule(static)
    for (int pass = 0; pass < k; ++pass) {
        Rng rng = stream_rng(seed, stream::dropout_mask, static_cast<std::uint64_t>(pass));
        DropoutMask mask = DropoutMask::sample(net.cfg, p, rng);
        raw[static_cast<std::size_t>(pass)] = forward(net, inputs, mask);
    }

    PredictionResult result;
    result.samples = k;
    const int rows = raw[0][0].rows;
    const int cols = raw[0][0].cols;
    result.means.assign(static_cast<std::size_t>(alpha), HeightMap(rows, cols));
    result.variances.assign(static_cast<std::size_t>(alpha), HeightMap(rows, cols));
    for (int t = 0; t < alpha; ++t) {
        HeightMap& mean = result.means[static_cast<std::size_t>(t)];
        HeightMap& var = result.variances[static_cast<std::size_t>(t)];
        const HeightMap& anchor = raw[0][static_cast<std::size_t>(t)];
        // Mean is accumulated relative to the first pass so identical passes
        // produce an exactly zero variance.
        for (int pass = 0; pass < k; ++pass) {
            const HeightMap& m = raw[static_cast<std::size_t>(pass)][static_cast<std::size_t>(t)];
            for (std::size_t i = 0; i < mean.values.size(); ++i) {
                mean.values[i] += m.values[i] - anchor.values[i];
            }
        }
        for (std::size_t i = 0; i < mean.values.size(); ++i) {
            mean.values[i] = anchor.values[i] + mean.values[i] / static_cast<double>(k);
        }
        for (int pass = 0; pass < k; ++pass) {
            const HeightMap& m = raw[static_cast<std::size_t>(pass)][static_cast<std::size_t>(t)];
            for (std::size_t i = 0; i < var.values.size(); ++i) {
                const double d = m.values[i] - mean.values[i];
                var.values[i] += d * d;
            }
        }
        // population normalization
        for (double& v : var.values) v /= static_cast<double>(k);
    }
    if (keep_samples) result.raw = std::move(raw);
    return result;
}

void write_model(const std::string& path, const Network& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write model file: " + path);
    }
    out.write("PSTL1", 5);
    const std::int32_t arch[3] = {net.cfg.hidden_full, net.cfg.hidden_half, net.cfg.kernel};
    out.write(reinterpret_cast<const char*>(arch), sizeof(arch));
    const double norm[2] = {net.norm.mean, net.norm.stddev};
    out.write(reinterpret_cast<const char*>(norm), sizeof(norm));
    const std::uint8_t degenerate = net.norm.degenerate ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&degenerate), 1);
    const std::int64_t count = static_cast<std::int64_t>(net.param_count());
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (auto& [p, len] : net.param_spans()) {
        out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(len * sizeof(double)));
    }
    if (!out) {
        throw std::runtime_error("model write failed: " + path);
    }
}

Network read_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open model file: " + path);
    }
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, "PSTL1", 5) != 0) {
        throw std::runtime_error("bad model magic in " + path);
    }
    std::int32_t arch[3];
    in.read(reinterpret_cast<char*>(arch), sizeof(arch));
    double norm[2];
    in.read(reinterpret_cast<char*>(norm), sizeof(norm));
    std::uint8_t degenerate = 0;
    in.read(reinterpret_cast<char*>(&degenerate), 1);
    std::int64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in) {
        throw std::runtime_error("model header truncated in " + path);
    }
    NetworkConfig cfg{arch[0], arch[1], arch[2]};
    Network net = make_network(cfg, 0);
    net.norm.mean = norm[0];
    net.norm.stddev = norm[1];
    net.norm.degenerate = degenerate != 0;
    if (count != static_cast<std::int64_t>(net.param_count())) {
        throw std::runtime_error("model parameter count mismatch in " + path);
    }
    for (auto& [p, len] : net.param_spans()) {
        in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(len * sizeof(double)));
    }
    if (!in) {
        throw std::runtime_error("model data truncated in " + path);
    }
    return net;
}

}  // namespace pasture::nn
