#include "pasture/reference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pasture::reference {

HeightMap eval_field(const synth::DynamicField& field, int t) {
    const synth::GridSpec& g = field.grid;
    HeightMap m(g.rows, g.cols);
    const double cell_w = g.width_m / g.cols;
    const double cell_h = g.height_m / g.rows;
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const double x = (c + 0.5) * cell_w;
            const double y = (r + 0.5) * cell_h;
            double sum = 0.0;
            for (std::size_t b = 0; b < field.bases.size(); ++b) {
                const double dx = x - field.bases[b].center_x;
                const double dy = y - field.bases[b].center_y;
                const double ls = field.bases[b].length_scale;
                double kernel = std::exp(-(dx * dx + dy * dy) / (2.0 * ls * ls));
                if (kernel < 1e-300) kernel = 0.0;
                sum += field.weights.per_basis[b][static_cast<std::size_t>(t)] * kernel;
            }
            m.at(r, c) = sum;
        }
    }
    return m;
}

namespace {

double replicated(const HeightMap& m, int r, int c) {
    if (r < 0) r = 0;
    if (r >= m.rows) r = m.rows - 1;
    if (c < 0) c = 0;
    if (c >= m.cols) c = m.cols - 1;
    return m.at(r, c);
}

}  // namespace

HeightMap median_filter_3x3(const HeightMap& m) {
    HeightMap out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            double w[9];
            int k = 0;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    w[k++] = replicated(m, r + dr, c + dc);
                }
            }
            // insertion sort, take the middle
            for (int i = 1; i < 9; ++i) {
                const double v = w[i];
                int j = i - 1;
                while (j >= 0 && w[j] > v) {
                    w[j + 1] = w[j];
                    --j;
                }
                w[j + 1] = v;
            }
            out.at(r, c) = w[4];
        }
    }
    return out;
}

HeightMap flat_conv_3x3(const HeightMap& m) {
    HeightMap out(m.rows, m.cols);
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            double s = 0.0;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    s += replicated(m, r + dr, c + dc);
                }
            }
            out.at(r, c) = s / 9.0;
        }
    }
    return out;
}

double percentile(std::span<const double> values, double q) {
    if (values.empty()) {
        throw std::runtime_error("percentile of empty list");
    }
    std::vector<double> sorted(values.begin(), values.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        const double v = sorted[i];
        std::size_t j = i;
        while (j > 0 && sorted[j - 1] > v) {
            sorted[j] = sorted[j - 1];
            --j;
        }
        sorted[j] = v;
    }
    const double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

void mc_mean_var(const std::vector<std::vector<HeightMap>>& raw, std::vector<HeightMap>& mean,
                 std::vector<HeightMap>& variance) {
    const std::size_t k = raw.size();
    const std::size_t steps = raw[0].size();
    mean.assign(steps, HeightMap(raw[0][0].rows, raw[0][0].cols));
    variance.assign(steps, HeightMap(raw[0][0].rows, raw[0][0].cols));
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t i = 0; i < mean[t].values.size(); ++i) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += raw[p][t].values[i];
            const double mu = s / static_cast<double>(k);
            double ss = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                const double d = raw[p][t].values[i] - mu;
                ss += d * d;
            }
            mean[t].values[i] = mu;
            variance[t].values[i] = ss / static_cast<double>(k);
        }
    }
}

nn::Tensor conv2d_forward(const nn::Conv2d& conv, const nn::Tensor& in) {
    const int pad = conv.k / 2;
    nn::Tensor out(conv.out_ch, in.h / conv.stride, in.w / conv.stride);
    for (int oc = 0; oc < conv.out_ch; ++oc) {
        for (int y = 0; y < out.h; ++y) {
            for (int x = 0; x < out.w; ++x) {
                double s = conv.with_bias ? conv.bias[static_cast<std::size_t>(oc)] : 0.0;
                for (int ic = 0; ic < conv.in_ch; ++ic) {
                    for (int ky = 0; ky < conv.k; ++ky) {
                        for (int kx = 0; kx < conv.k; ++kx) {
                            const int iy = y * conv.stride + ky - pad;
                            const int ix = x * conv.stride + kx - pad;
                            if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                            const std::size_t wi =
                                ((static_cast<std::size_t>(oc) * conv.in_ch + ic) * conv.k + ky) * conv.k +
                                kx;
                            s += conv.weight[wi] * in.at(ic, iy, ix);
                        }
                    }
                }
                out.at(oc, y, x) = s;
            }
        }
    }
    return out;
}

void convlstm_step(const nn::ConvLstmCell& cell, const nn::Tensor& x, const nn::Tensor& h_prev,
                   const nn::Tensor& c_prev, nn::Tensor& h, nn::Tensor& c) {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const nn::Tensor xi = conv2d_forward(cell.wx_i, x);
    const nn::Tensor hi = conv2d_forward(cell.wh_i, h_prev);
    const nn::Tensor xf = conv2d_forward(cell.wx_f, x);
    const nn::Tensor hf = conv2d_forward(cell.wh_f, h_prev);
    const nn::Tensor xc = conv2d_forward(cell.wx_c, x);
    const nn::Tensor hc = conv2d_forward(cell.wh_c, h_prev);
    const nn::Tensor xo = conv2d_forward(cell.wx_o, x);
    const nn::Tensor ho = conv2d_forward(cell.wh_o, h_prev);

    h = nn::Tensor(cell.hid_ch, h_prev.h, h_prev.w);
    c = nn::Tensor(cell.hid_ch, h_prev.h, h_prev.w);
    for (int ch = 0; ch < cell.hid_ch; ++ch) {
        for (int y = 0; y < h.h; ++y) {
            for (int xx = 0; xx < h.w; ++xx) {
                const double i_gate =
                    sig(xi.at(ch, y, xx) + hi.at(ch, y, xx) +
                        cell.w_ci[static_cast<std::size_t>(ch)] * c_prev.at(ch, y, xx));
                const double f_gate =
                    sig(xf.at(ch, y, xx) + hf.at(ch, y, xx) +
                        cell.w_cf[static_cast<std::size_t>(ch)] * c_prev.at(ch, y, xx));
                const double d = i_gate * std::tanh(xc.at(ch, y, xx) + hc.at(ch, y, xx));
                const double c_new = f_gate * c_prev.at(ch, y, xx) + d;
                const double o_gate =
                    sig(xo.at(ch, y, xx) + ho.at(ch, y, xx) +
                        cell.w_co[static_cast<std::size_t>(ch)] * c_new);
                c.at(ch, y, xx) = c_new;
                h.at(ch, y, xx) = o_gate * std::tanh(c_new);
            }
        }
    }
}

plan::Policy greedy_plan(const plan::GroundSet& ground, const plan::VarianceSet& variance,
                         const plan::PlannerWeights& w, const plan::BudgetConstraint& c,
                         bool stop_at_nonpositive) {
    std::vector<plan::DeploymentFactor> all = ground.materialize();
    std::vector<bool> checked(all.size(), false);
    plan::Policy policy;

    std::size_t remaining = all.size();
    while (remaining > 0) {
        const double f_current = plan::objective(policy.factors, variance, w, ground);
        double best_gain = 0.0;
        std::size_t best_i = all.size();
        for (std::size_t i = 0; i < all.size(); ++i) {
            if (checked[i]) continue;
            std::vector<plan::DeploymentFactor> with = policy.factors;
            with.push_back(all[i]);
            const double gain = plan::objective(with, variance, w, ground) - f_current;
            if (best_i == all.size() || gain > best_gain ||
                (gain == best_gain && plan::factor_less(all[i], all[best_i]))) {
                best_gain = gain;
                best_i = i;
            }
        }
        if (stop_at_nonpositive && best_gain <= 0.0) break;
        checked[best_i] = true;
        --remaining;
        std::vector<plan::DeploymentFactor> with = policy.factors;
        with.push_back(all[best_i]);
        const bool ok = plan::is_independent(with, c);
        policy.trace.push_back({all[best_i], best_gain, ok});
        if (ok) policy.factors = std::move(with);
    }
    policy.score = plan::objective_parts(policy.factors, variance, w, ground);
    return policy;
}

}  // namespace pasture::reference
