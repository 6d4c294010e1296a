#include "centerface/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include <Eigen/Core>

namespace centerface::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands live on different tapes");
    return *a.tape;
}

void require_shape(const Tensor& t, int c, int h, int w, const char* what) {
    if (t.channels != c || t.height != h || t.width != w) {
        throw ContractError(std::string(what) + ": expected shape " + std::to_string(c) + "x" +
                            std::to_string(h) + "x" + std::to_string(w) + ", got " +
                            std::to_string(t.channels) + "x" + std::to_string(t.height) + "x" +
                            std::to_string(t.width));
    }
}

Tensor like(const Tensor& t) { return Tensor(t.channels, t.height, t.width, 0.0); }

template <class F, class G>
Var unary(Var a, F forward, G derivative) {
    const Tensor& x = a.value();
    Tensor y = like(x);
    for (std::size_t k = 0; k < x.size(); ++k) y.data[k] = forward(x.data[k]);
    return a.tape->record(std::move(y), {a},
                          [a, derivative](const Tensor& go, std::span<Tensor* const> g) {
                              if (!g[0]) return;
                              const Tensor& x = a.value();
                              for (std::size_t k = 0; k < x.size(); ++k) {
                                  g[0]->data[k] += go.data[k] * derivative(x.data[k]);
                              }
                          });
}

double sigmoid_of(double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

double softplus_of(double v) {
    return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }
double Var::scalar() const {
    const Tensor& t = value();
    if (t.size() != 1) throw ContractError("scalar() on a non-scalar tensor");
    return t.data[0];
}

Tensor scalar_tensor(double v) { return Tensor(1, 1, 1, v); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.parents.reserve(parents.size());
    for (const Var& p : parents) {
        if (p.tape != this) throw ContractError("parent recorded on a different tape");
        n.parents.push_back(p.id);
        n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
    if (v.tape != this || v.id < 0 || v.id >= size()) throw ContractError("variable not on this tape");
    return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= size()) throw ContractError("variable not on this tape");
    return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() != n.value.size()) {
        throw ContractError("gradient requested for a variable that received none");
    }
    return n.grad;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Tensor& Tape::ensure_grad(Node& n) {
    if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) n.grad = like(n.value);
    return n.grad;
}

void Tape::backward(Var root) {
    Node& r = node(root);
    if (r.value.size() != 1) throw ContractError("backward() needs a scalar root");
    for (Node& n : nodes_) {
        if (n.requires_grad) ensure_grad(n);
    }
    if (!r.requires_grad) return;
    r.grad.data[0] += 1.0;

    std::vector<Tensor*> grads;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.backward) continue;
        grads.clear();
        for (int p : n.parents) grads.push_back(nodes_[p].requires_grad ? &nodes_[p].grad : nullptr);
        n.backward(n.grad, grads);
    }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Tensor y = a.value();
    for (std::size_t k = 0; k < y.size(); ++k) y.data[k] += b.value().data[k];
    return t.record(std::move(y), {a, b}, [](const Tensor& go, std::span<Tensor* const> g) {
        for (Tensor* gi : g) {
            if (!gi) continue;
            for (std::size_t k = 0; k < go.size(); ++k) gi->data[k] += go.data[k];
        }
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "sub");
    Tensor y = a.value();
    for (std::size_t k = 0; k < y.size(); ++k) y.data[k] -= b.value().data[k];
    return t.record(std::move(y), {a, b}, [](const Tensor& go, std::span<Tensor* const> g) {
        for (std::size_t k = 0; k < go.size(); ++k) {
            if (g[0]) g[0]->data[k] += go.data[k];
            if (g[1]) g[1]->data[k] -= go.data[k];
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor y = a.value();
    for (std::size_t k = 0; k < y.size(); ++k) y.data[k] *= b.value().data[k];
    return t.record(std::move(y), {a, b}, [a, b](const Tensor& go, std::span<Tensor* const> g) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        for (std::size_t k = 0; k < go.size(); ++k) {
            if (g[0]) g[0]->data[k] += go.data[k] * bv.data[k];
            if (g[1]) g[1]->data[k] += go.data[k] * av.data[k];
        }
    });
}

Var scale(Var a, double k) {
    return unary(a, [k](double v) { return k * v; }, [k](double) { return k; });
}

Var relu(Var a) {
    return unary(a, [](double v) { return v > 0 ? v : 0.0; },
                 [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
    return unary(a, sigmoid_of, [](double v) {
        const double s = sigmoid_of(v);
        return s * (1.0 - s);
    });
}

Var softplus(Var a) { return unary(a, softplus_of, sigmoid_of); }

Var sum(Var a) {
    double total = 0;
    for (double v : a.value().data) total += v;
    return a.tape->record(scalar_tensor(total), {a},
                          [](const Tensor& go, std::span<Tensor* const> g) {
                              if (!g[0]) return;
                              for (double& v : g[0]->data) v += go.data[0];
                          });
}

Var add_n(std::span<const Var> terms) {
    if (terms.empty()) throw ContractError("add_n needs at least one term");
    Tape& t = *terms.front().tape;
    Tensor y = terms.front().value();
    for (std::size_t n = 1; n < terms.size(); ++n) {
        same_tape(terms.front(), terms[n]);
        require_same_shape(y, terms[n].value(), "add_n");
        for (std::size_t k = 0; k < y.size(); ++k) y.data[k] += terms[n].value().data[k];
    }
    return t.record(std::move(y), {terms.begin(), terms.end()},
                    [](const Tensor& go, std::span<Tensor* const> g) {
                        for (Tensor* gi : g) {
                            if (!gi) continue;
                            for (std::size_t k = 0; k < go.size(); ++k) gi->data[k] += go.data[k];
                        }
                    });
}

// ---------------------------------------------------------------------------
// Convolution and dense layers

Var conv2d(Var x, Var weight, Var bias, const Conv2dSpec& spec) {
    Tape& t = same_tape(x, weight);
    same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const int k = spec.kernel;
    const int cin = xv.channels;
    const int cout = wv.channels;
    require_shape(wv, cout, cin, k * k, "conv2d weight");
    require_shape(bias.value(), cout, 1, 1, "conv2d bias");
    if (spec.stride < 1 || spec.padding < 0 || spec.dilation < 1) {
        throw ContractError("conv2d: bad stride/padding/dilation");
    }

    const int h = xv.height, w = xv.width;
    const int span = spec.dilation * (k - 1) + 1;
    const int ho = (h + 2 * spec.padding - span) / spec.stride + 1;
    const int wo = (w + 2 * spec.padding - span) / spec.stride + 1;
    if (ho <= 0 || wo <= 0) throw ContractError("conv2d: kernel larger than padded input");
    const int rows = cin * k * k;
    const int cols = ho * wo;

    // im2col: row (c, ky, kx), column (oy, ox)
    auto colbuf = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = colbuf->data() + static_cast<std::size_t>((c * k + ky) * k + kx) * cols;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
                        if (ix < 0 || ix >= w) continue;
                        row[oy * wo + ox] = xv(c, iy, ix);
                    }
                }
            }
        }
    }

    Tensor y(cout, ho, wo);
    ConstMatMap wm(wv.data.data(), cout, rows);
    ConstMatMap cm(colbuf->data(), rows, cols);
    MatMap ym(y.data.data(), cout, cols);
    ym.noalias() = wm * cm;
    for (int o = 0; o < cout; ++o) ym.row(o).array() += bias.value().data[o];

    return t.record(
        std::move(y), {x, weight, bias},
        [x, weight, spec, colbuf, cin, cout, rows, cols, ho, wo](const Tensor& go,
                                                                 std::span<Tensor* const> g) {
            const int k = spec.kernel;
            ConstMatMap gm(go.data.data(), cout, cols);
            if (g[1]) {
                ConstMatMap cm(colbuf->data(), rows, cols);
                MatMap gw(g[1]->data.data(), cout, rows);
                gw.noalias() += gm * cm.transpose();
            }
            if (g[2]) {
                for (int o = 0; o < cout; ++o) g[2]->data[o] += gm.row(o).sum();
            }
            if (g[0]) {
                ConstMatMap wm(weight.value().data.data(), cout, rows);
                RowMatrix gcols = wm.transpose() * gm;
                Tensor& gx = *g[0];
                const int h = gx.height, w = gx.width;
                for (int c = 0; c < cin; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const double* row = gcols.data() +
                                static_cast<std::size_t>((c * k + ky) * k + kx) * cols;
                            for (int oy = 0; oy < ho; ++oy) {
                                const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
                                if (iy < 0 || iy >= h) continue;
                                for (int ox = 0; ox < wo; ++ox) {
                                    const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
                                    if (ix < 0 || ix >= w) continue;
                                    gx(c, iy, ix) += row[oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Var dense(Var x, Var weight, Var bias) {
    Tape& t = same_tape(x, weight);
    same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const int in = static_cast<int>(xv.size());
    const int out = wv.channels;
    require_shape(xv, in, 1, 1, "dense input");
    require_shape(wv, out, in, 1, "dense weight");
    require_shape(bias.value(), out, 1, 1, "dense bias");

    Tensor y(out, 1, 1);
    for (int o = 0; o < out; ++o) {
        double acc = bias.value().data[o];
        for (int i = 0; i < in; ++i) acc += wv.data[o * in + i] * xv.data[i];
        y.data[o] = acc;
    }
    return t.record(std::move(y), {x, weight, bias},
                    [x, weight, in, out](const Tensor& go, std::span<Tensor* const> g) {
                        const Tensor& xv = x.value();
                        const Tensor& wv = weight.value();
                        for (int o = 0; o < out; ++o) {
                            const double d = go.data[o];
                            if (g[2]) g[2]->data[o] += d;
                            for (int i = 0; i < in; ++i) {
                                if (g[1]) g[1]->data[o * in + i] += d * xv.data[i];
                                if (g[0]) g[0]->data[i] += d * wv.data[o * in + i];
                            }
                        }
                    });
}

// ---------------------------------------------------------------------------
// Pooling

Var spatial_avg_pool(Var x) {
    const Tensor& xv = x.value();
    const double n = static_cast<double>(xv.plane());
    Tensor y(xv.channels, 1, 1);
    for (int c = 0; c < xv.channels; ++c) {
        double acc = 0;
        for (double v : xv.channel(c)) acc += v;
        y.data[c] = acc / n;
    }
    return x.tape->record(std::move(y), {x}, [n](const Tensor& go, std::span<Tensor* const> g) {
        if (!g[0]) return;
        for (int c = 0; c < g[0]->channels; ++c) {
            for (double& v : g[0]->channel(c)) v += go.data[c] / n;
        }
    });
}

Var spatial_max_pool(Var x) {
    const Tensor& xv = x.value();
    Tensor y(xv.channels, 1, 1);
    std::vector<std::size_t> arg(xv.channels);
    for (int c = 0; c < xv.channels; ++c) {
        auto ch = xv.channel(c);
        const auto it = std::max_element(ch.begin(), ch.end());
        arg[c] = static_cast<std::size_t>(it - ch.begin());
        y.data[c] = *it;
    }
    return x.tape->record(std::move(y), {x},
                          [arg = std::move(arg)](const Tensor& go, std::span<Tensor* const> g) {
                              if (!g[0]) return;
                              for (int c = 0; c < g[0]->channels; ++c) {
                                  g[0]->channel(c)[arg[c]] += go.data[c];
                              }
                          });
}

Var channel_avg_pool(Var x) {
    const Tensor& xv = x.value();
    const double n = xv.channels;
    Tensor y(1, xv.height, xv.width);
    for (int c = 0; c < xv.channels; ++c) {
        auto ch = xv.channel(c);
        for (std::size_t p = 0; p < ch.size(); ++p) y.data[p] += ch[p];
    }
    for (double& v : y.data) v /= n;
    return x.tape->record(std::move(y), {x}, [n](const Tensor& go, std::span<Tensor* const> g) {
        if (!g[0]) return;
        for (int c = 0; c < g[0]->channels; ++c) {
            auto ch = g[0]->channel(c);
            for (std::size_t p = 0; p < ch.size(); ++p) ch[p] += go.data[p] / n;
        }
    });
}

Var channel_max_pool(Var x) {
    const Tensor& xv = x.value();
    Tensor y(1, xv.height, xv.width);
    std::vector<int> arg(xv.plane(), 0);
    for (std::size_t p = 0; p < xv.plane(); ++p) {
        double best = xv.data[p];
        for (int c = 1; c < xv.channels; ++c) {
            const double v = xv.data[c * xv.plane() + p];
            if (v > best) {
                best = v;
                arg[p] = c;
            }
        }
        y.data[p] = best;
    }
    return x.tape->record(std::move(y), {x},
                          [arg = std::move(arg)](const Tensor& go, std::span<Tensor* const> g) {
                              if (!g[0]) return;
                              const std::size_t plane = g[0]->plane();
                              for (std::size_t p = 0; p < plane; ++p) {
                                  g[0]->data[arg[p] * plane + p] += go.data[p];
                              }
                          });
}

Var concat_channels(Var a, Var b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.height != bv.height || av.width != bv.width) {
        throw ContractError("concat_channels: spatial shapes differ");
    }
    Tensor y(av.channels + bv.channels, av.height, av.width);
    std::copy(av.data.begin(), av.data.end(), y.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(av.size()));
    const std::size_t split = av.size();
    return t.record(std::move(y), {a, b}, [split](const Tensor& go, std::span<Tensor* const> g) {
        if (g[0]) {
            for (std::size_t k = 0; k < split; ++k) g[0]->data[k] += go.data[k];
        }
        if (g[1]) {
            for (std::size_t k = 0; k < g[1]->size(); ++k) g[1]->data[k] += go.data[split + k];
        }
    });
}

// ---------------------------------------------------------------------------
// Broadcast scaling

Var scale_channels(Var x, Var w) {
    Tape& t = same_tape(x, w);
    const Tensor& xv = x.value();
    require_shape(w.value(), xv.channels, 1, 1, "scale_channels weights");
    Tensor y = xv;
    for (int c = 0; c < xv.channels; ++c) {
        for (double& v : y.channel(c)) v *= w.value().data[c];
    }
    return t.record(std::move(y), {x, w}, [x, w](const Tensor& go, std::span<Tensor* const> g) {
        const Tensor& xv = x.value();
        const Tensor& wv = w.value();
        for (int c = 0; c < xv.channels; ++c) {
            auto gc = go.channel(c);
            auto xc = xv.channel(c);
            double acc = 0;
            for (std::size_t p = 0; p < gc.size(); ++p) {
                if (g[0]) g[0]->channel(c)[p] += gc[p] * wv.data[c];
                acc += gc[p] * xc[p];
            }
            if (g[1]) g[1]->data[c] += acc;
        }
    });
}

Var scale_cells(Var x, Var m) {
    Tape& t = same_tape(x, m);
    const Tensor& xv = x.value();
    require_shape(m.value(), 1, xv.height, xv.width, "scale_cells map");
    Tensor y = xv;
    for (int c = 0; c < xv.channels; ++c) {
        auto yc = y.channel(c);
        for (std::size_t p = 0; p < yc.size(); ++p) yc[p] *= m.value().data[p];
    }
    return t.record(std::move(y), {x, m}, [x, m](const Tensor& go, std::span<Tensor* const> g) {
        const Tensor& xv = x.value();
        const Tensor& mv = m.value();
        for (int c = 0; c < xv.channels; ++c) {
            auto gc = go.channel(c);
            auto xc = xv.channel(c);
            for (std::size_t p = 0; p < gc.size(); ++p) {
                if (g[0]) g[0]->channel(c)[p] += gc[p] * mv.data[p];
                if (g[1]) g[1]->data[p] += gc[p] * xc[p];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Embedding helpers

Var l2_normalize_cells(Var x) {
    const Tensor& xv = x.value();
    const std::size_t plane = xv.plane();
    Tensor y = xv;
    std::vector<double> norms(plane);
    for (std::size_t p = 0; p < plane; ++p) {
        double ss = 0;
        for (int c = 0; c < xv.channels; ++c) ss += xv.data[c * plane + p] * xv.data[c * plane + p];
        norms[p] = std::max(std::sqrt(ss), 1e-12);
        for (int c = 0; c < xv.channels; ++c) y.data[c * plane + p] /= norms[p];
    }
    Tensor normalized = y;
    return x.tape->record(
        std::move(y), {x},
        [normalized = std::move(normalized), norms = std::move(norms)](
            const Tensor& go, std::span<Tensor* const> g) {
            if (!g[0]) return;
            const std::size_t plane = normalized.plane();
            const int channels = normalized.channels;
            for (std::size_t p = 0; p < plane; ++p) {
                double dot = 0;
                for (int c = 0; c < channels; ++c) {
                    dot += normalized.data[c * plane + p] * go.data[c * plane + p];
                }
                for (int c = 0; c < channels; ++c) {
                    const std::size_t k = c * plane + p;
                    g[0]->data[k] += (go.data[k] - normalized.data[k] * dot) / norms[p];
                }
            }
        });
}

Var region_mean(Var x, std::span<const GridIndex> cells) {
    if (cells.empty()) throw ContractError("region_mean over an empty cell set");
    const Tensor& xv = x.value();
    std::vector<std::size_t> flat;
    flat.reserve(cells.size());
    for (const GridIndex& cell : cells) {
        if (cell.i < 0 || cell.i >= xv.height || cell.j < 0 || cell.j >= xv.width) {
            throw ContractError("region_mean cell outside tensor");
        }
        flat.push_back(static_cast<std::size_t>(cell.i) * xv.width + cell.j);
    }
    const double n = static_cast<double>(flat.size());
    Tensor y(xv.channels, 1, 1);
    for (int c = 0; c < xv.channels; ++c) {
        auto ch = xv.channel(c);
        double acc = 0;
        for (std::size_t p : flat) acc += ch[p];
        y.data[c] = acc / n;
    }
    return x.tape->record(std::move(y), {x},
                          [flat = std::move(flat), n](const Tensor& go, std::span<Tensor* const> g) {
                              if (!g[0]) return;
                              for (int c = 0; c < g[0]->channels; ++c) {
                                  auto ch = g[0]->channel(c);
                                  for (std::size_t p : flat) ch[p] += go.data[c] / n;
                              }
                          });
}

Var flip_width(Var x, int negate_channel) {
    const Tensor& xv = x.value();
    Tensor y = like(xv);
    const int w = xv.width;
    for (int c = 0; c < xv.channels; ++c) {
        const double sign = c == negate_channel ? -1.0 : 1.0;
        for (int i = 0; i < xv.height; ++i) {
            for (int j = 0; j < w; ++j) y(c, i, j) = sign * xv(c, i, w - 1 - j);
        }
    }
    return x.tape->record(std::move(y), {x},
                          [negate_channel](const Tensor& go, std::span<Tensor* const> g) {
                              if (!g[0]) return;
                              const int w = go.width;
                              for (int c = 0; c < go.channels; ++c) {
                                  const double sign = c == negate_channel ? -1.0 : 1.0;
                                  for (int i = 0; i < go.height; ++i) {
                                      for (int j = 0; j < w; ++j) {
                                          (*g[0])(c, i, w - 1 - j) += sign * go(c, i, j);
                                      }
                                  }
                              }
                          });
}

}  // namespace centerface::ad
