#include "cbn/nn.hpp"

#include <algorithm>
#include <cmath>

#include "cbn/kernels.hpp"

namespace cbn::nn {
namespace {

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

kernels::ConvGeometry geometry(const Tensor4& x, const Parameter& weights) {
    return {weights.value.channels(), weights.value.batch(), x.height(), x.width()};
}

void check_conv(const Tensor4& x, const Parameter& weights, const Parameter& bias) {
    const Shape4& ws = weights.value.shape();
    if (ws.height != 3 || ws.width != 3)
        throw ShapeError("conv3x3: kernel extent must be 3x3, got " + ws.str());
    if (x.channels() != ws.channels)
        throw ShapeError("conv3x3: input has " + std::to_string(x.channels()) +
                         " channels, layer expects " + std::to_string(ws.channels));
    if (bias.value.size() != static_cast<std::size_t>(ws.batch))
        throw ShapeError("conv3x3: bias length does not match output channels");
}

}  // namespace

Parameter::Parameter(std::string n, Tensor4 v, double lr)
    : name(std::move(n)), value(std::move(v)), lr_scale(lr) {
    grad = Tensor4(value.shape());
    velocity = Tensor4(value.shape());
}

void Parameter::zero_grad() {
    if (grad.shape() != value.shape())
        grad = Tensor4(value.shape());
    else
        grad.fill(0.0);
}

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw StateError("tape: variable was not recorded");
    return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw StateError("tape: variable was not recorded");
    return nodes_[v.id];
}

const Tensor4& Tape::val(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value;
}

Tensor4& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor4(val(id).shape());
    return n.grad;
}

const Tensor4& Tape::value(Var v) const {
    node(v);
    return val(v.id);
}

const Tensor4& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!consumed_) throw StateError("tape: grad requested before backward");
    if (n.grad.empty()) throw StateError("tape: variable has no gradient");
    return n.grad;
}

double Tape::scalar(Var v) const {
    const Tensor4& t = value(v);
    if (t.size() != 1) throw ShapeError("tape: value is not a scalar");
    return t[0];
}

Var Tape::constant(Tensor4 value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::watch(Tensor4 value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::param(Parameter& p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = true;
    const Var v = push(std::move(n));
    nodes_[v.id].backward = [this, id = v.id, &p] {
        const Tensor4& g = nodes_[id].grad;
        if (g.empty()) return;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor4(p.value.shape());
        for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    };
    return v;
}

Var Tape::conv3x3(Var x, Parameter& weights, Parameter& bias) {
    const Tensor4& in = value(x);
    check_conv(in, weights, bias);
    const kernels::ConvGeometry g = geometry(in, weights);
    const kernels::KernelTable& k = kernels::active();
    Tensor4 out(in.batch(), g.out_channels, g.height, g.width);
    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * in.shape().plane();
    const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * in.shape().plane();
    for (int b = 0; b < in.batch(); ++b) {
        k.conv3x3_forward(in.data().subspan(b * in_stride, in_stride), weights.value.data(),
                          bias.value.data(), out.data().subspan(b * out_stride, out_stride), g);
    }
    Node n;
    n.value = std::move(out);
    n.requires_grad = true;
    const Var v = push(std::move(n));
    nodes_[v.id].backward = [this, id = v.id, xid = x.id, &weights, &bias, g, in_stride,
                             out_stride] {
        const Tensor4& dout = nodes_[id].grad;
        const Tensor4& input = val(xid);
        const kernels::KernelTable& kt = kernels::active();
        if (weights.grad.shape() != weights.value.shape()) weights.grad = Tensor4(weights.value.shape());
        if (bias.grad.shape() != bias.value.shape()) bias.grad = Tensor4(bias.value.shape());
        const bool need_input = nodes_[xid].requires_grad;
        Tensor4* din = need_input ? &grad_buffer(xid) : nullptr;
        for (int b = 0; b < input.batch(); ++b) {
            auto dslice = dout.data().subspan(b * out_stride, out_stride);
            kt.conv3x3_backward_weights(input.data().subspan(b * in_stride, in_stride), dslice,
                                        weights.grad.data(), bias.grad.data(), g);
            if (din != nullptr)
                kt.conv3x3_backward_input(dslice, weights.value.data(),
                                          din->data().subspan(b * in_stride, in_stride), g);
        }
    };
    return v;
}

Var Tape::relu(Var x) {
    const Tensor4& in = value(x);
    Tensor4 out(in.shape());
    kernels::active().relu_forward(in.data(), out.data());
    Node n;
    n.value = std::move(out);
    n.requires_grad = node(x).requires_grad;
    const Var v = push(std::move(n));
    if (nodes_[v.id].requires_grad) {
        nodes_[v.id].backward = [this, id = v.id, xid = x.id] {
            kernels::active().relu_backward(val(xid).data(), nodes_[id].grad.data(),
                                            grad_buffer(xid).data());
        };
    }
    return v;
}

Var Tape::sigmoid(Var x) {
    const Tensor4& in = value(x);
    Tensor4 out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = logistic(in[i]);
    Node n;
    n.value = std::move(out);
    n.requires_grad = node(x).requires_grad;
    const Var v = push(std::move(n));
    if (nodes_[v.id].requires_grad) {
        nodes_[v.id].backward = [this, id = v.id, xid = x.id] {
            const Tensor4& s = nodes_[id].value;
            const Tensor4& d = nodes_[id].grad;
            Tensor4& dx = grad_buffer(xid);
            for (std::size_t i = 0; i < s.size(); ++i) dx[i] += d[i] * s[i] * (1.0 - s[i]);
        };
    }
    return v;
}

Var Tape::concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape4 first = value(parts[0]).shape();
    int channels = 0;
    bool any_grad = false;
    for (Var p : parts) {
        const Shape4& s = value(p).shape();
        if (s.batch != first.batch || s.height != first.height || s.width != first.width)
            throw ShapeError("concat: extent mismatch " + s.str() + " vs " + first.str());
        channels += s.channels;
        any_grad = any_grad || node(p).requires_grad;
    }
    Tensor4 out(first.batch, channels, first.height, first.width);
    for (int b = 0; b < first.batch; ++b) {
        int c0 = 0;
        for (Var p : parts) {
            const Tensor4& t = value(p);
            for (int c = 0; c < t.channels(); ++c) {
                auto src = t.plane(b, c);
                std::copy(src.begin(), src.end(), out.plane(b, c0 + c).begin());
            }
            c0 += t.channels();
        }
    }
    Node n;
    n.value = std::move(out);
    n.requires_grad = any_grad;
    const Var v = push(std::move(n));
    if (any_grad) {
        std::vector<std::size_t> ids;
        for (Var p : parts) ids.push_back(p.id);
        nodes_[v.id].backward = [this, id = v.id, ids] {
            const Tensor4& d = nodes_[id].grad;
            for (int b = 0; b < d.batch(); ++b) {
                int c0 = 0;
                for (std::size_t pid : ids) {
                    const int ch = val(pid).channels();
                    if (nodes_[pid].requires_grad) {
                        Tensor4& g = grad_buffer(pid);
                        for (int c = 0; c < ch; ++c) {
                            auto src = d.plane(b, c0 + c);
                            auto dst = g.plane(b, c);
                            for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
                        }
                    }
                    c0 += ch;
                }
            }
        };
    }
    return v;
}

Var Tape::gate_fuse(Var gate, Var a, Var b) {
    const Tensor4& g = value(gate);
    const Tensor4& ga = value(a);
    const Tensor4& gb = value(b);
    require_same_shape(g.shape(), ga.shape(), "gate_fuse");
    require_same_shape(g.shape(), gb.shape(), "gate_fuse");
    Tensor4 out(g.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - g[i]) * ga[i] + g[i] * gb[i];
    Node n;
    n.value = std::move(out);
    n.requires_grad = node(gate).requires_grad || node(a).requires_grad || node(b).requires_grad;
    const Var v = push(std::move(n));
    if (nodes_[v.id].requires_grad) {
        nodes_[v.id].backward = [this, id = v.id, gid = gate.id, aid = a.id, bid = b.id] {
            const Tensor4& d = nodes_[id].grad;
            const Tensor4& gv = val(gid);
            const Tensor4& av = val(aid);
            const Tensor4& bv = val(bid);
            if (nodes_[gid].requires_grad) {
                Tensor4& dg = grad_buffer(gid);
                for (std::size_t i = 0; i < d.size(); ++i) dg[i] += d[i] * (bv[i] - av[i]);
            }
            if (nodes_[aid].requires_grad) {
                Tensor4& da = grad_buffer(aid);
                for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * (1.0 - gv[i]);
            }
            if (nodes_[bid].requires_grad) {
                Tensor4& db = grad_buffer(bid);
                for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * gv[i];
            }
        };
    }
    return v;
}

Var Tape::add(Var a, Var b) {
    const Tensor4& x = value(a);
    const Tensor4& y = value(b);
    require_same_shape(x.shape(), y.shape(), "add");
    Tensor4 out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    Node n;
    n.value = std::move(out);
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    const Var v = push(std::move(n));
    if (nodes_[v.id].requires_grad) {
        nodes_[v.id].backward = [this, id = v.id, aid = a.id, bid = b.id] {
            const Tensor4& d = nodes_[id].grad;
            for (std::size_t pid : {aid, bid}) {
                if (!nodes_[pid].requires_grad) continue;
                Tensor4& g = grad_buffer(pid);
                for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
            }
        };
    }
    return v;
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::mul(Var a, Var b) {
    const Tensor4& x = value(a);
    const Tensor4& y = value(b);
    require_same_shape(x.shape(), y.shape(), "mul");
    Tensor4 out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    Node n;
    n.value = std::move(out);
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    const Var v = push(std::move(n));
    if (nodes_[v.id].requires_grad) {
        nodes_[v.id].backward = [this, id = v.id, aid = a.id, bid = b.id] {
            const Tensor4& d = nodes_[id].grad;
            if (nodes_[aid].requires_grad) {
                Tensor4& g = grad_buffer(aid);
                const Tensor4& o = val(bid);
                for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * o[i];
            }
            if (nodes_[bid].requires_grad) {
                Tensor4& g = grad_buffer(bid);
                const Tensor4& o = val(aid);
                for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * o[i];
            }
        };
    }
    return v;
}

Var Tape::scale(Var x, double s) {
    const Tensor4& in = value(x);
    Tensor4 out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = s * in[i];
    Node n;
    n.value = std::move(out);
    n.requires_grad = node(x).requires_grad;
    const Var v = push(std::move(n));
    if (nodes_[v.id].requires_grad) {
        nodes_[v.id].backward = [this, id = v.id, xid = x.id, s] {
            const Tensor4& d = nodes_[id].grad;
            Tensor4& g = grad_buffer(xid);
            for (std::size_t i = 0; i < d.size(); ++i) g[i] += s * d[i];
        };
    }
    return v;
}

Var Tape::sum_squares(Var x) {
    const Tensor4& in = value(x);
    double acc = 0.0;
    for (double v : in.data()) acc += v * v;
    Node n;
    n.value = Tensor4(1, 1, 1, 1, acc);
    n.requires_grad = node(x).requires_grad;
    const Var v = push(std::move(n));
    if (nodes_[v.id].requires_grad) {
        nodes_[v.id].backward = [this, id = v.id, xid = x.id] {
            const double d = nodes_[id].grad[0];
            const Tensor4& xv = val(xid);
            Tensor4& g = grad_buffer(xid);
            for (std::size_t i = 0; i < xv.size(); ++i) g[i] += 2.0 * d * xv[i];
        };
    }
    return v;
}

Var Tape::masked_sq_loss(Var pred, const Tensor4& target, const Tensor4& mask) {
    const Tensor4& p = value(pred);
    const double loss = nn::masked_sq_loss(p, target, mask);
    Node n;
    n.value = Tensor4(1, 1, 1, 1, loss);
    n.requires_grad = node(pred).requires_grad;
    const Var v = push(std::move(n));
    if (nodes_[v.id].requires_grad) {
        nodes_[v.id].backward = [this, id = v.id, pid = pred.id, target, mask] {
            const double d = nodes_[id].grad[0];
            const Tensor4& pv = val(pid);
            Tensor4& g = grad_buffer(pid);
            const std::size_t plane = pv.shape().plane();
            for (int b = 0; b < pv.batch(); ++b) {
                auto pp = pv.plane(b, 0);
                auto tp = target.plane(b, 0);
                auto gp = g.plane(b, 0);
                for (int c = 0; c < mask.channels(); ++c) {
                    auto mp = mask.plane(b, c);
                    for (std::size_t i = 0; i < plane; ++i)
                        gp[i] -= 2.0 * d * mp[i] * mp[i] * (tp[i] - pp[i]);
                }
            }
        };
    }
    return v;
}

void Tape::backward(Var loss) {
    if (nodes_.empty()) throw StateError("backward called before any forward pass was recorded");
    if (consumed_) throw StateError("backward already ran on this tape");
    Node& root = node(loss);
    if (val(loss.id).size() != 1) throw ShapeError("backward: loss must be a scalar");
    root.grad = Tensor4(1, 1, 1, 1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backward && !n.grad.empty()) n.backward();
    }
    consumed_ = true;
}

ConvLayer make_conv_layer(int in_channels, int out_channels, std::mt19937_64& rng,
                          const std::string& name, double lr_scale) {
    if (in_channels < 1 || out_channels < 1) throw ShapeError("conv layer channels must be >= 1");
    ConvLayer layer;
    Tensor4 w(out_channels, in_channels, 3, 3);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (9.0 * in_channels)));
    for (double& v : w.data()) v = dist(rng);
    layer.weights = Parameter(name + ".w", std::move(w), lr_scale);
    layer.bias = Parameter(name + ".b", Tensor4(1, out_channels, 1, 1), lr_scale);
    return layer;
}

Tensor4 conv_forward(const Tensor4& input, const ConvLayer& layer) {
    check_conv(input, layer.weights, layer.bias);
    const kernels::ConvGeometry g = geometry(input, layer.weights);
    Tensor4 out(input.batch(), g.out_channels, g.height, g.width);
    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * input.shape().plane();
    const std::size_t out_stride = static_cast<std::size_t>(g.out_channels) * input.shape().plane();
    for (int b = 0; b < input.batch(); ++b) {
        kernels::active().conv3x3_forward(input.data().subspan(b * in_stride, in_stride),
                                          layer.weights.value.data(), layer.bias.value.data(),
                                          out.data().subspan(b * out_stride, out_stride), g);
    }
    return out;
}

Tensor4 relu_forward(const Tensor4& input) {
    Tensor4 out(input.shape());
    kernels::active().relu_forward(input.data(), out.data());
    return out;
}

double masked_sq_loss(const Tensor4& pred, const Tensor4& target, const Tensor4& mask) {
    require_same_shape(pred.shape(), target.shape(), "masked_sq_loss: pred/target");
    if (pred.channels() != 1) throw ShapeError("masked_sq_loss: pred must be single-channel");
    const Shape4& m = mask.shape();
    if (m.batch != pred.batch() || m.height != pred.height() || m.width != pred.width())
        throw ShapeError("masked_sq_loss: mask " + m.str() + " does not broadcast to " +
                         pred.shape().str());
    const std::size_t plane = pred.shape().plane();
    double acc = 0.0;
    for (int b = 0; b < pred.batch(); ++b) {
        auto pp = pred.plane(b, 0);
        auto tp = target.plane(b, 0);
        for (int c = 0; c < m.channels; ++c) {
            auto mp = mask.plane(b, c);
            for (std::size_t i = 0; i < plane; ++i) {
                const double r = mp[i] * (tp[i] - pp[i]);
                acc += r * r;
            }
        }
    }
    return acc;
}

void Sgd::step(std::span<Parameter* const> params) {
    const kernels::KernelTable& k = kernels::active();
    for (Parameter* p : params) {
        if (p->velocity.shape() != p->value.shape()) p->velocity = Tensor4(p->value.shape());
        if (p->grad.shape() != p->value.shape()) p->grad = Tensor4(p->value.shape());
        k.momentum_step(p->value.data(), p->grad.data(), p->velocity.data(),
                        p->lr_scale * base_lr_, momentum_);
    }
    ++step_;
}

}  // namespace cbn::nn
