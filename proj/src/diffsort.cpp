#include "bend/diffsort.hpp"

#include "bend/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace bend::diffsort {

namespace {

double logistic_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logistic_derivative(double x) {
    const double s = logistic_value(x);
    return s * (1.0 - s);
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void check_perm_matches(const ActivationMap& a, const SoftPermutation& perm, SortAxis axis) {
    const std::size_t len = axis == SortAxis::height ? a.height() : a.width();
    if (perm.n() != len || perm.batch() != a.batch())
        throw Error(ErrorKind::Shape, "permute_axis: permutation [" + std::to_string(perm.batch()) + ", " +
                                          std::to_string(perm.n()) + "] does not fit map " + a.shape_string());
}

}  // namespace

const Relaxation& logistic() {
    static const Relaxation r{&logistic_value, &logistic_derivative};
    return r;
}

SoftPermutation SoftPermutation::from_indices(const std::vector<std::vector<std::size_t>>& index) {
    const std::size_t n = index.empty() ? 0 : index.front().size();
    SoftPermutation p(index.size(), n, 0.0);
    for (std::size_t b = 0; b < index.size(); ++b) {
        if (index[b].size() != n) throw Error(ErrorKind::Shape, "from_indices: ragged index rows");
        for (std::size_t i = 0; i < n; ++i) {
            if (index[b][i] >= n) throw Error(ErrorKind::Shape, "from_indices: index out of range");
            p(b, i, index[b][i]) = 1.0;
        }
    }
    return p;
}

std::vector<std::vector<Comparator>> bitonic_schedule(std::size_t n) {
    if (!is_power_of_two(n)) throw Error(ErrorKind::Size, "bitonic network needs a power-of-two length, got " + std::to_string(n));
    std::vector<std::vector<Comparator>> layers;
    for (std::size_t block = 2; block <= n; block *= 2) {
        for (std::size_t stride = block / 2; stride >= 1; stride /= 2) {
            std::vector<Comparator> layer;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = i ^ stride;
                if (j <= i) continue;
                const bool ascending = (i & block) == 0;
                layer.push_back(ascending ? Comparator{i, j} : Comparator{j, i});
            }
            layers.push_back(std::move(layer));
        }
    }
    return layers;
}

SortResult soft_sort(const ScoreVector& scores, double steepness, SortTrace* trace, const Relaxation& relaxation) {
    if (!(steepness > 0.0)) throw Error(ErrorKind::InvalidConfig, "sorting steepness must be positive");
    const Matrix& s = scores.values;
    const std::size_t B = s.rows(), n = s.cols();
    const auto schedule = bitonic_schedule(n);

    SortResult result{Matrix(B, n), SoftPermutation(B, n, steepness)};
    if (trace) {
        trace->scores = s;
        trace->steepness = steepness;
        trace->relaxation = &relaxation;
        trace->schedule = schedule;
        trace->values.assign(B, {});
        trace->perms.assign(B, {});
        trace->weights.assign(B, {});
        trace->slopes.assign(B, {});
    }

    const auto batch = static_cast<std::int64_t>(B);
#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < batch; ++b) {
        std::vector<double> v(s.row(b).begin(), s.row(b).end());
        double* P = result.perm.sample(b);
        for (std::size_t i = 0; i < n; ++i) P[i * n + i] = 1.0;

        for (const auto& layer : schedule) {
            if (trace) {
                trace->values[b].push_back(v);
                trace->perms[b].emplace_back(P, P + n * n);
            }
            for (const Comparator& c : layer) {
                const double lo = v[c.lo], hi = v[c.hi];
                const double x = steepness * (lo - hi);
                // w is the probability that the pair is out of order.
                const double w = relaxation.value(x);
                v[c.lo] = (1.0 - w) * lo + w * hi;
                v[c.hi] = w * lo + (1.0 - w) * hi;
                double* row_lo = P + c.lo * n;
                double* row_hi = P + c.hi * n;
                for (std::size_t k = 0; k < n; ++k) {
                    const double pl = row_lo[k], ph = row_hi[k];
                    row_lo[k] = (1.0 - w) * pl + w * ph;
                    row_hi[k] = w * pl + (1.0 - w) * ph;
                }
                if (trace) {
                    trace->weights[b].push_back(w);
                    trace->slopes[b].push_back(steepness * relaxation.derivative(x));
                }
            }
        }
        if (trace) trace->perms[b].emplace_back(P, P + n * n);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += P[i * n + k] * s(b, k);
            result.sorted(b, i) = acc;
        }
    }
    return result;
}

Matrix soft_sort_backward(const SortTrace& trace, const Matrix* d_sorted, const SoftPermutation* d_perm) {
    const std::size_t B = trace.scores.rows(), n = trace.scores.cols();
    Matrix d_scores(B, n);
    const auto batch = static_cast<std::int64_t>(B);

#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < batch; ++b) {
        std::vector<double> G(n * n, 0.0);
        std::vector<double> gv(n, 0.0);
        if (d_perm) std::copy(d_perm->sample(b), d_perm->sample(b) + n * n, G.begin());

        // sorted = P_final * scores
        if (d_sorted) {
            const std::vector<double>& P = trace.perms[b].back();
            for (std::size_t i = 0; i < n; ++i) {
                const double g = (*d_sorted)(b, i);
                for (std::size_t k = 0; k < n; ++k) {
                    d_scores(b, k) += P[i * n + k] * g;
                    G[i * n + k] += g * trace.scores(b, k);
                }
            }
        }

        std::size_t cidx = trace.weights[b].size();
        for (std::size_t l = trace.schedule.size(); l-- > 0;) {
            const auto& layer = trace.schedule[l];
            const auto& P_prev = trace.perms[b][l];
            const auto& v_prev = trace.values[b][l];
            cidx -= layer.size();
            for (std::size_t ci = 0; ci < layer.size(); ++ci) {
                const Comparator& c = layer[ci];
                const double w = trace.weights[b][cidx + ci];
                const double slope = trace.slopes[b][cidx + ci];
                const double lo = v_prev[c.lo], hi = v_prev[c.hi];

                double dw = (gv[c.lo] - gv[c.hi]) * (hi - lo);
                double* G_lo = G.data() + c.lo * n;
                double* G_hi = G.data() + c.hi * n;
                const double* Pl = P_prev.data() + c.lo * n;
                const double* Ph = P_prev.data() + c.hi * n;
                for (std::size_t k = 0; k < n; ++k) {
                    dw += (G_lo[k] - G_hi[k]) * (Ph[k] - Pl[k]);
                    const double gl = G_lo[k], gh = G_hi[k];
                    G_lo[k] = (1.0 - w) * gl + w * gh;
                    G_hi[k] = w * gl + (1.0 - w) * gh;
                }
                const double gl = gv[c.lo], gh = gv[c.hi];
                gv[c.lo] = (1.0 - w) * gl + w * gh + dw * slope;
                gv[c.hi] = w * gl + (1.0 - w) * gh - dw * slope;
            }
        }
        for (std::size_t k = 0; k < n; ++k) d_scores(b, k) += gv[k];
    }
    return d_scores;
}

HardDecode hard_decode(const SoftPermutation& perm) {
    HardDecode out;
    out.batch = perm.batch();
    out.n = perm.n();
    out.indices.resize(out.batch * out.n);
    for (std::size_t b = 0; b < out.batch; ++b) {
        std::vector<bool> seen(out.n, false);
        for (std::size_t i = 0; i < out.n; ++i) {
            const double* row = perm.sample(b) + i * out.n;
            const auto k = static_cast<std::size_t>(std::max_element(row, row + out.n) - row);
            out.indices[b * out.n + i] = k;
            if (seen[k]) out.valid = false;
            seen[k] = true;
        }
    }
    return out;
}

ActivationMap permute_axis(const ActivationMap& a, const SoftPermutation& perm, SortAxis axis) {
    check_perm_matches(a, perm, axis);
    ActivationMap out(a.batch(), a.channels(), a.height(), a.width());
    const std::size_t C = a.channels(), H = a.height(), W = a.width(), n = perm.n();
    const auto planes = static_cast<std::int64_t>(a.batch() * C);

#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p) {
        const std::size_t b = static_cast<std::size_t>(p) / C;
        const double* P = perm.sample(b);
        const double* src = a.data() + p * H * W;
        double* dst = out.data() + p * H * W;
        if (axis == SortAxis::height) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < n; ++k) {
                    const double pik = P[i * n + k];
                    if (pik == 0.0) continue;
                    for (std::size_t x = 0; x < W; ++x) dst[i * W + x] += pik * src[k * W + x];
                }
        } else {
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < n; ++k) acc += P[j * n + k] * src[y * W + k];
                    dst[y * W + j] = acc;
                }
        }
    }
    return out;
}

void permute_axis_backward(const ActivationMap& a, const SoftPermutation& perm, SortAxis axis,
                           const ActivationMap& d_out, ActivationMap* d_a, SoftPermutation* d_perm) {
    check_perm_matches(a, perm, axis);
    if (!d_out.same_shape(a)) throw Error(ErrorKind::Shape, "permute_axis backward: gradient shape mismatch");
    const std::size_t C = a.channels(), H = a.height(), W = a.width(), n = perm.n();
    const auto batch = static_cast<std::int64_t>(a.batch());
    if (d_a) *d_a = ActivationMap(a.batch(), C, H, W);
    if (d_perm) *d_perm = SoftPermutation(a.batch(), n, perm.steepness());

#pragma omp parallel for schedule(static)
    for (std::int64_t b = 0; b < batch; ++b) {
        const double* P = perm.sample(b);
        for (std::size_t c = 0; c < C; ++c) {
            const double* g = d_out.plane_ptr(b, c);
            const double* src = a.plane_ptr(b, c);
            if (axis == SortAxis::height) {
                if (d_a) {
                    double* dst = d_a->plane_ptr(b, c);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t k = 0; k < n; ++k) {
                            const double pik = P[i * n + k];
                            for (std::size_t x = 0; x < W; ++x) dst[k * W + x] += pik * g[i * W + x];
                        }
                }
                if (d_perm) {
                    double* dP = d_perm->sample(b);
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t k = 0; k < n; ++k) {
                            double acc = 0.0;
                            for (std::size_t x = 0; x < W; ++x) acc += g[i * W + x] * src[k * W + x];
                            dP[i * n + k] += acc;
                        }
                }
            } else {
                if (d_a) {
                    double* dst = d_a->plane_ptr(b, c);
                    for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t j = 0; j < n; ++j) {
                            const double gj = g[y * W + j];
                            for (std::size_t k = 0; k < n; ++k) dst[y * W + k] += P[j * n + k] * gj;
                        }
                }
                if (d_perm) {
                    double* dP = d_perm->sample(b);
                    for (std::size_t y = 0; y < H; ++y)
                        for (std::size_t j = 0; j < n; ++j) {
                            const double gj = g[y * W + j];
                            for (std::size_t k = 0; k < n; ++k) dP[j * n + k] += gj * src[y * W + k];
                        }
                }
            }
        }
    }
}

ScoreVector row_scores(const ActivationMap& a, const kernels::ConvWeights& head, SortAxis axis, ScoreTrace* trace) {
    if (head.in_channels != a.channels() || head.out_channels != 1)
        throw Error(ErrorKind::Shape, "row_scores: score head expects " + std::to_string(head.in_channels) +
                                          " channels, map is " + a.shape_string());
    Tensor4 map;
    kernels::conv3x3_forward(a, head, map);
    const std::size_t H = a.height(), W = a.width();
    ScoreVector scores{Matrix(a.batch(), axis == SortAxis::height ? H : W)};
    for (std::size_t b = 0; b < a.batch(); ++b) {
        if (axis == SortAxis::height) {
            for (std::size_t y = 0; y < H; ++y) {
                double acc = 0.0;
                for (std::size_t x = 0; x < W; ++x) acc += map(b, 0, y, x);
                scores.values(b, y) = acc / static_cast<double>(W);
            }
        } else {
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (std::size_t y = 0; y < H; ++y) acc += map(b, 0, y, x);
                scores.values(b, x) = acc / static_cast<double>(H);
            }
        }
    }
    if (trace) trace->score_map = std::move(map);
    return scores;
}

void row_scores_backward(const ActivationMap& a, const kernels::ConvWeights& head, SortAxis axis,
                         const Matrix& d_scores, const kernels::ConvGradients& d_head, ActivationMap* d_a) {
    const std::size_t H = a.height(), W = a.width();
    const std::size_t n = axis == SortAxis::height ? H : W;
    if (d_scores.rows() != a.batch() || d_scores.cols() != n)
        throw Error(ErrorKind::Shape, "row_scores backward: score gradient shape mismatch");
    Tensor4 d_map(a.batch(), 1, H, W);
    for (std::size_t b = 0; b < a.batch(); ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                d_map(b, 0, y, x) = axis == SortAxis::height ? d_scores(b, y) / static_cast<double>(W)
                                                             : d_scores(b, x) / static_cast<double>(H);
    kernels::conv3x3_backward(a, head, d_map, d_a, &d_head);
}

}  // namespace bend::diffsort
