#include "cbn/binet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cbn::binet {
namespace {

constexpr double kOutputInitScale = 0.01;
// Gate logit bias at init: joint training starts close to the common branch.
constexpr double kGateInitBias = -3.0;

int scaled(int width, double s) { return std::max(1, static_cast<int>(std::lround(width * s))); }

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<nn::ConvLayer> make_stack(int in_channels, const std::vector<int>& plan,
                                      std::mt19937_64& rng, const std::string& prefix) {
    std::vector<nn::ConvLayer> out;
    int in = in_channels;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        out.push_back(nn::make_conv_layer(in, plan[i], rng, prefix + std::to_string(i)));
        in = plan[i];
    }
    // Small output layer: an untrained branch predicts a near-zero residual.
    for (double& w : out.back().weights.value.data()) w *= kOutputInitScale;
    return out;
}

Tensor4 run_stack(const std::vector<nn::ConvLayer>& stack, Tensor4 x) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        x = nn::conv_forward(x, stack[i]);
        if (i + 1 < stack.size()) x = nn::relu_forward(x);
    }
    return x;
}

nn::Var record_stack(nn::Tape& tape, std::vector<nn::ConvLayer>& stack, nn::Var x) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        x = tape.conv3x3(x, stack[i].weights, stack[i].bias);
        if (i + 1 < stack.size()) x = tape.relu(x);
    }
    return x;
}

Tensor4 concat(std::initializer_list<const Tensor4*> parts) {
    const Tensor4& first = **parts.begin();
    int channels = 0;
    for (const Tensor4* p : parts) channels += p->channels();
    Tensor4 out(first.batch(), channels, first.height(), first.width());
    for (int b = 0; b < first.batch(); ++b) {
        int c0 = 0;
        for (const Tensor4* p : parts) {
            for (int c = 0; c < p->channels(); ++c) {
                auto src = p->plane(b, c);
                std::copy(src.begin(), src.end(), out.plane(b, c0 + c).begin());
            }
            c0 += p->channels();
        }
    }
    return out;
}

Tensor4 slice(const Tensor4& t, std::span<const int> rows) {
    Tensor4 out(static_cast<int>(rows.size()), t.channels(), t.height(), t.width());
    const std::size_t chunk = static_cast<std::size_t>(t.channels()) * t.shape().plane();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto src = t.data().subspan(static_cast<std::size_t>(rows[r]) * chunk, chunk);
        std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * chunk));
    }
    return out;
}

void set_rates(std::vector<nn::ConvLayer>& stack, double hidden, double last) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const double r = i + 1 == stack.size() ? last : hidden;
        stack[i].weights.lr_scale = r;
        stack[i].bias.lr_scale = r;
    }
}

void reset_state(const std::vector<nn::Parameter*>& params) {
    for (nn::Parameter* p : params) {
        p->velocity.fill(0.0);
        p->zero_grad();
    }
}

void clip_gradients(const std::vector<nn::Parameter*>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const nn::Parameter* p : params)
        for (double g : p->grad.data()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm || !std::isfinite(norm)) return;
    const double s = max_norm / norm;
    for (nn::Parameter* p : params)
        for (double& g : p->grad.data()) g *= s;
}

struct StepHeads {
    bool common = false, hf = false, fused = false;
};

StepHeads heads_for(Step step) {
    switch (step) {
        case Step::Common: return {true, false, false};
        case Step::HighFrequency: return {false, true, false};
        case Step::Joint: return {true, true, true};
    }
    return {};
}

void check_step(const GatedBiNet& net, Step step) {
    if (step == Step::Common && !net.has_common())
        throw StateError("this bi-network has no common branch");
    if (step == Step::HighFrequency && !net.has_hf())
        throw StateError("this bi-network has no high-frequency branch");
}

// Scalar loss of a step's objective for one recorded batch.
nn::Var step_loss(nn::Tape& tape, const GatedBiNet::Outputs& out, Step step,
                  const Tensor4& residual, const Tensor4& prior) {
    switch (step) {
        case Step::Common:
            return tape.sum_squares(tape.sub(out.ga, tape.constant(residual)));
        case Step::HighFrequency:
            return tape.masked_sq_loss(out.gb, residual, prior);
        case Step::Joint:
            return tape.sum_squares(tape.sub(out.g, tape.constant(residual)));
    }
    return {};
}

// Mean per-pixel weight of the masked loss, sum_c E_c^2. Prior magnitudes are
// residual magnitudes on a unit intensity scale, so this is far below 1.
double mask_energy(const Tensor4& prior) {
    if (prior.empty()) return 1.0;
    double s = 0.0;
    for (double v : prior.data()) s += v * v;
    const double per_pixel = s / static_cast<double>(prior.size() / prior.channels());
    return per_pixel > 0.0 ? per_pixel : 1.0;
}

std::vector<int> batch_rows(const std::vector<int>& order, int start, int batch) {
    const int end = std::min<int>(static_cast<int>(order.size()), start + batch);
    return {order.begin() + start, order.begin() + end};
}

}  // namespace

std::vector<int> branch_plan(int depth, double width_scale) {
    if (depth < 1) throw ArgumentError("branch depth must be at least 1");
    if (!(width_scale > 0.0)) throw ArgumentError("width_scale must be positive");
    int n64, n128, n32;
    if (depth >= 12) {
        n64 = 4;
        n32 = 3;
        n128 = depth - 8;
    } else {
        const int hidden = depth - 1;
        n64 = hidden > 0 ? std::max(1, hidden / 3) : 0;
        n32 = hidden / 3;
        n128 = hidden - n64 - n32;
    }
    std::vector<int> plan;
    plan.insert(plan.end(), n64, scaled(64, width_scale));
    plan.insert(plan.end(), n128, scaled(128, width_scale));
    plan.insert(plan.end(), n32, scaled(32, width_scale));
    plan.push_back(1);
    return plan;
}

std::vector<int> gate_plan(int depth, double width_scale) {
    if (depth < 1) throw ArgumentError("gate depth must be at least 1");
    if (!(width_scale > 0.0)) throw ArgumentError("width_scale must be positive");
    std::vector<int> plan(depth - 1, scaled(64, width_scale));
    plan.push_back(1);
    return plan;
}

GatedBiNet::GatedBiNet(const BiNetConfig& cfg, int cascade_index, std::mt19937_64& rng)
    : cfg_(cfg), cascade_index_(cascade_index) {
    if (cfg.mode != GateMode::CommonOnly && cfg.prior_channels < 1)
        throw ArgumentError("the high-frequency branch needs at least one prior channel");
    const std::vector<int> branch = branch_plan(cfg.branch_depth, cfg.width_scale);
    if (cfg.mode != GateMode::HighFrequencyOnly) common_ = make_stack(1, branch, rng, "common.");
    if (cfg.mode != GateMode::CommonOnly)
        hf_ = make_stack(1 + cfg.prior_channels, branch, rng, "hf.");
    if (cfg.mode == GateMode::Learned) {
        gate_ = make_stack(3 + cfg.prior_channels, gate_plan(cfg.gate_depth, cfg.width_scale), rng,
                           "gate.");
        for (double& b : gate_.back().bias.value.data()) b = kGateInitBias;
    }
}

GatedBiNet GatedBiNet::with_layers(const BiNetConfig& cfg, int cascade_index,
                                   std::vector<nn::ConvLayer> common,
                                   std::vector<nn::ConvLayer> hf,
                                   std::vector<nn::ConvLayer> gate) {
    auto check = [](const std::vector<nn::ConvLayer>& stack, int in, const char* what) {
        for (const nn::ConvLayer& l : stack) {
            if (l.in_channels() != in) throw ShapeError(std::string(what) + ": layer chain mismatch");
            in = l.out_channels();
        }
        if (!stack.empty() && in != 1) throw ShapeError(std::string(what) + ": output must be 1 channel");
    };
    check(common, 1, "common branch");
    check(hf, 1 + cfg.prior_channels, "hf branch");
    check(gate, 3 + cfg.prior_channels, "gate");
    GatedBiNet net;
    net.cfg_ = cfg;
    net.cascade_index_ = cascade_index;
    net.common_ = std::move(common);
    net.hf_ = std::move(hf);
    net.gate_ = std::move(gate);
    return net;
}

HallucinationResult GatedBiNet::forward(const Image& up, const Tensor4& warped_prior) const {
    const int w = up.width(), h = up.height();
    const bool needs_prior = cfg_.mode != GateMode::CommonOnly;
    if (needs_prior) {
        if (warped_prior.batch() != 1 || warped_prior.height() != h || warped_prior.width() != w)
            throw ShapeError("bi-network: prior extent " + warped_prior.shape().str() +
                             " does not match the upscaled image");
        if (warped_prior.channels() != cfg_.prior_channels)
            throw ShapeError("bi-network: expected " + std::to_string(cfg_.prior_channels) +
                             " prior channels, got " + std::to_string(warped_prior.channels()));
    }
    const Tensor4 x = to_tensor(up);
    HallucinationResult r;
    r.G_A = Image(w, h);
    r.G_B = Image(w, h);
    r.G_lambda = Image(w, h, cfg_.mode == GateMode::HighFrequencyOnly ? 1.0 : 0.0);
    Tensor4 ga, gb;
    if (has_common()) {
        ga = run_stack(common_, x);
        r.G_A = from_tensor(ga);
    }
    if (has_hf()) {
        gb = run_stack(hf_, concat({&x, &warped_prior}));
        r.G_B = from_tensor(gb);
    }
    if (has_gate()) {
        const Tensor4 logits = run_stack(gate_, concat({&x, &warped_prior, &ga, &gb}));
        for (std::size_t i = 0; i < r.G_lambda.size(); ++i)
            r.G_lambda.pixels()[i] = logistic(logits[i]);
    }
    r.G = Image(w, h);
    for (std::size_t i = 0; i < r.G.size(); ++i)
        r.G.pixels()[i] = fuse(r.G_lambda.pixels()[i], r.G_A.pixels()[i], r.G_B.pixels()[i]);
    return r;
}

GatedBiNet::Outputs GatedBiNet::record(nn::Tape& tape, const Tensor4& up, const Tensor4& prior,
                                       bool want_common, bool want_hf, bool want_fused) {
    Outputs out;
    const nn::Var x = tape.constant(up);
    const bool need_common = has_common() && (want_common || want_fused);
    const bool need_hf = has_hf() && (want_hf || want_fused);
    nn::Var pv;
    if (need_hf || (want_fused && has_gate())) pv = tape.constant(prior);
    if (need_common) out.ga = record_stack(tape, common_, x);
    if (need_hf) {
        const nn::Var in[] = {x, pv};
        out.gb = record_stack(tape, hf_, tape.concat_channels(in));
    }
    if (want_fused) {
        if (has_gate()) {
            const nn::Var in[] = {x, pv, out.ga, out.gb};
            out.lambda = tape.sigmoid(record_stack(tape, gate_, tape.concat_channels(in)));
            out.g = tape.gate_fuse(out.lambda, out.ga, out.gb);
        } else {
            out.g = has_common() ? out.ga : out.gb;
        }
    }
    return out;
}

std::vector<nn::Parameter*> GatedBiNet::parameters(std::vector<nn::ConvLayer>& stack) {
    std::vector<nn::Parameter*> out;
    for (nn::ConvLayer& l : stack) {
        out.push_back(&l.weights);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<nn::Parameter*> GatedBiNet::all_parameters() {
    std::vector<nn::Parameter*> out = parameters(common_);
    for (nn::Parameter* p : parameters(hf_)) out.push_back(p);
    for (nn::Parameter* p : parameters(gate_)) out.push_back(p);
    return out;
}

std::size_t GatedBiNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto* stack : {&common_, &hf_, &gate_})
        for (const nn::ConvLayer& l : *stack) n += l.weights.value.size() + l.bias.value.size();
    return n;
}

double loss_common(const Image& G_A, const Image& hi, const Image& up) {
    if (!G_A.same_extent(hi) || !G_A.same_extent(up)) throw ShapeError("loss_common: extent mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < G_A.size(); ++i) {
        const double r = hi.pixels()[i] - up.pixels()[i] - G_A.pixels()[i];
        acc += r * r;
    }
    return acc;
}

double loss_hf(const Image& G_B, const Image& hi, const Image& up, const Tensor4& warped_prior) {
    if (!G_B.same_extent(hi) || !G_B.same_extent(up)) throw ShapeError("loss_hf: extent mismatch");
    return nn::masked_sq_loss(to_tensor(G_B), to_tensor(hi - up), warped_prior);
}

double dataset_loss(GatedBiNet& net, const BiNetDataset& data, Step step, int batch_size) {
    if (data.size() == 0) throw DataError("bi-network dataset is empty");
    check_step(net, step);
    const StepHeads heads = heads_for(step);
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    for (int start = 0; start < data.size(); start += std::max(1, batch_size)) {
        const std::vector<int> rows = batch_rows(order, start, std::max(1, batch_size));
        const Tensor4 up = slice(data.up, rows);
        const Tensor4 prior = data.prior.empty() ? Tensor4() : slice(data.prior, rows);
        const Tensor4 res = slice(data.residual, rows);
        nn::Tape tape;
        const auto out = net.record(tape, up, prior, heads.common, heads.hf, heads.fused);
        total += tape.scalar(step_loss(tape, out, step, res, prior));
    }
    return total / data.size();
}

std::vector<double> train_step(GatedBiNet& net, const BiNetDataset& data, Step step, int epochs,
                               const Schedule& schedule) {
    if (data.size() == 0) throw DataError("bi-network dataset is empty");
    if (schedule.batch_size < 1) throw ArgumentError("batch size must be at least 1");
    check_step(net, step);
    if (step != Step::Common && net.has_hf() && data.prior.channels() != net.config().prior_channels)
        throw ShapeError("dataset prior channels do not match the bi-network");

    const BiNetConfig& cfg = net.config();
    const LearningRates& lr = cfg.rates;
    std::vector<nn::Parameter*> trainable;
    auto enlist = [&](std::vector<nn::ConvLayer>& stack, double hidden, double last) {
        set_rates(stack, hidden, last);
        for (nn::Parameter* p : net.parameters(stack)) trainable.push_back(p);
    };
    switch (step) {
        case Step::Common: enlist(net.common(), lr.pretrain_hidden, lr.pretrain_last); break;
        case Step::HighFrequency: enlist(net.hf(), lr.pretrain_hidden, lr.pretrain_last); break;
        case Step::Joint:
            enlist(net.common(), lr.joint_hidden, lr.joint_last);
            enlist(net.hf(), lr.joint_hidden, lr.joint_last);
            enlist(net.gate(), cfg.gate_lr_multiplier * lr.joint_hidden,
                   cfg.gate_lr_multiplier * lr.joint_last);
            break;
    }
    reset_state(net.all_parameters());

    const StepHeads heads = heads_for(step);
    // Step ii descends L_B / mask energy, so it moves at the pace of step i.
    const double loss_scale = step == Step::HighFrequency ? 1.0 / mask_energy(data.prior) : 1.0;
    nn::Sgd opt(schedule.base_lr, schedule.momentum);
    std::mt19937_64 rng(schedule.seed * 0x9E3779B97F4A7C15ULL + static_cast<unsigned>(step) + 1);
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> history;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double running = 0.0;
        for (int start = 0; start < data.size(); start += schedule.batch_size) {
            const std::vector<int> rows = batch_rows(order, start, schedule.batch_size);
            const Tensor4 up = slice(data.up, rows);
            const Tensor4 prior = data.prior.empty() ? Tensor4() : slice(data.prior, rows);
            const Tensor4 res = slice(data.residual, rows);
            nn::Tape tape;
            const auto out = net.record(tape, up, prior, heads.common, heads.hf, heads.fused);
            const nn::Var sum = step_loss(tape, out, step, res, prior);
            const nn::Var loss = tape.scale(sum, loss_scale / static_cast<double>(rows.size()));
            running += tape.scalar(sum);
            for (nn::Parameter* p : net.all_parameters()) p->zero_grad();
            tape.backward(loss);
            clip_gradients(trainable, schedule.grad_clip);
            opt.step(trainable);
        }
        history.push_back(schedule.evaluate_each_epoch
                              ? dataset_loss(net, data, step, schedule.batch_size)
                              : running / data.size());
    }
    return history;
}

TrainReport train_three_step(GatedBiNet& net, const BiNetDataset& data, const Schedule& schedule) {
    if (data.size() == 0) throw DataError("bi-network dataset is empty");
    TrainReport report;
    if (net.has_common()) report.common = train_step(net, data, Step::Common, schedule.epochs_common, schedule);
    if (net.has_hf()) report.hf = train_step(net, data, Step::HighFrequency, schedule.epochs_hf, schedule);
    report.joint = train_step(net, data, Step::Joint, schedule.epochs_joint, schedule);
    return report;
}

}  // namespace cbn::binet
