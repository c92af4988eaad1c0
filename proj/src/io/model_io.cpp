#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "cbn/io.hpp"

namespace cbn::io {
namespace {

using cascade::CascadeModel;
using cascade::CascadeStage;

constexpr char kMagic[8] = {'C', 'B', 'N', 'M', 'O', 'D', 'E', 'L'};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i32(int v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void bytes(const std::vector<std::uint8_t>& b) {
        u64(b.size());
        buf_.insert(buf_.end(), b.begin(), b.end());
    }
    void point(Point2 p) {
        f64(p.x);
        f64(p.y);
    }
    void points(const std::vector<Point2>& ps) {
        u64(ps.size());
        for (Point2 p : ps) point(p);
    }
    void ints(const std::vector<int>& v) {
        u64(v.size());
        for (int x : v) i32(x);
    }
    void doubles(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
    void matrix(const Eigen::MatrixXd& m) {
        u64(static_cast<std::uint64_t>(m.rows()));
        u64(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
    }
    void vector(const Eigen::VectorXd& v) {
        u64(static_cast<std::uint64_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) f64(v(i));
    }
    void tensor(const Tensor4& t) {
        const Shape4 s = t.shape();
        i32(s.batch);
        i32(s.channels);
        i32(s.height);
        i32(s.width);
        for (double v : t.data()) f64(v);
    }
    std::vector<std::uint8_t>& data() { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t n) : p_(data), n_(n) {}

    void need(std::size_t k) const {
        if (n_ - pos_ < k) throw CorruptionError("model file is truncated");
    }
    std::uint8_t u8() {
        need(1);
        return p_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    int i32() { return static_cast<int>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::size_t count(std::size_t elem_size) {
        const std::uint64_t n = u64();
        if (elem_size > 0 && n > (n_ - pos_) / elem_size) throw CorruptionError("model file: bad length");
        return static_cast<std::size_t>(n);
    }
    std::string str() {
        const std::size_t n = count(1);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
        pos_ += n;
        return s;
    }
    std::vector<std::uint8_t> bytes() {
        const std::size_t n = count(1);
        std::vector<std::uint8_t> b(p_ + pos_, p_ + pos_ + n);
        pos_ += n;
        return b;
    }
    Point2 point() {
        const double x = f64();
        return {x, f64()};
    }
    std::vector<Point2> points() {
        std::vector<Point2> v(count(16));
        for (Point2& p : v) p = point();
        return v;
    }
    std::vector<int> ints() {
        std::vector<int> v(count(4));
        for (int& x : v) x = i32();
        return v;
    }
    std::vector<double> doubles() {
        std::vector<double> v(count(8));
        for (double& x : v) x = f64();
        return v;
    }
    Eigen::MatrixXd matrix() {
        const std::uint64_t rows = u64();
        const std::uint64_t cols = u64();
        if (cols != 0 && rows > (n_ - pos_) / 8 / cols) throw CorruptionError("model file: bad matrix");
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = f64();
        return m;
    }
    Eigen::VectorXd vector() {
        const std::size_t n = count(8);
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = f64();
        return v;
    }
    Tensor4 tensor() {
        Shape4 s;
        s.batch = i32();
        s.channels = i32();
        s.height = i32();
        s.width = i32();
        if (s.batch == 0 && s.channels == 0 && s.height == 0 && s.width == 0) return {};
        if (s.batch <= 0 || s.channels <= 0 || s.height <= 0 || s.width <= 0 ||
            s.size() > (n_ - pos_) / 8)
            throw CorruptionError("model file: bad tensor shape");
        Tensor4 t(s);
        for (double& v : t.data()) v = f64();
        return t;
    }
    bool done() const { return pos_ == n_; }

private:
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

void write_param(Writer& w, const nn::Parameter& p) {
    w.str(p.name);
    w.f64(p.lr_scale);
    w.tensor(p.value);
}

nn::Parameter read_param(Reader& r) {
    std::string name = r.str();
    const double lr = r.f64();
    Tensor4 value = r.tensor();
    if (value.empty()) throw CorruptionError("model file: empty parameter");
    return nn::Parameter(std::move(name), std::move(value), lr);
}

void write_stack(Writer& w, const std::vector<nn::ConvLayer>& stack) {
    w.u64(stack.size());
    for (const nn::ConvLayer& l : stack) {
        write_param(w, l.weights);
        write_param(w, l.bias);
    }
}

std::vector<nn::ConvLayer> read_stack(Reader& r) {
    std::vector<nn::ConvLayer> out(r.count(1));
    for (nn::ConvLayer& l : out) {
        l.weights = read_param(r);
        l.bias = read_param(r);
    }
    return out;
}

std::vector<std::uint8_t> shape_section(const geometry::ShapeModel& s) {
    Writer w;
    w.i32(s.layout.count);
    w.ints(s.layout.left_eye);
    w.ints(s.layout.right_eye);
    w.points(s.mean);
    w.point(s.centroid);
    w.matrix(s.landmark_bases);
    w.vector(s.variances);
    w.u64(s.tps.size());
    for (const Eigen::MatrixXd& m : s.tps) w.matrix(m);
    return std::move(w.data());
}

geometry::ShapeModel read_shape(Reader& r, const geometry::TemplateFrame& frame) {
    geometry::ShapeModel s;
    s.frame = frame;
    s.layout.count = r.i32();
    s.layout.left_eye = r.ints();
    s.layout.right_eye = r.ints();
    s.mean = r.points();
    s.centroid = r.point();
    s.landmark_bases = r.matrix();
    s.variances = r.vector();
    s.tps.resize(r.count(16));
    for (Eigen::MatrixXd& m : s.tps) m = r.matrix();
    return s;
}

std::vector<std::uint8_t> stage_section(const CascadeStage& st) {
    Writer w;
    w.i32(st.level);
    w.i32(st.input_level);
    w.i32(st.regressor_level);
    const geometry::MeanTemplate& t = st.tmpl;
    w.i32(t.level);
    w.i32(t.width);
    w.i32(t.height);
    w.bytes(t.domain_mask);
    w.doubles(t.dense_bases);
    w.matrix(t.landmark_bases);
    w.points(t.mean_landmarks);
    w.tensor(t.prior);
    w.u8(st.has_regressor ? 1 : 0);
    w.matrix(st.regressor.R);
    w.vector(st.regressor.phi_bar);
    w.matrix(st.regressor.J);
    const binet::BiNetConfig& c = st.net.config();
    w.i32(st.net.cascade_index());
    w.i32(c.prior_channels);
    w.i32(c.branch_depth);
    w.i32(c.gate_depth);
    w.f64(c.width_scale);
    w.i32(static_cast<int>(c.mode));
    w.f64(c.rates.pretrain_hidden);
    w.f64(c.rates.pretrain_last);
    w.f64(c.rates.joint_hidden);
    w.f64(c.rates.joint_last);
    w.f64(c.gate_lr_multiplier);
    write_stack(w, st.net.common());
    write_stack(w, st.net.hf());
    write_stack(w, st.net.gate());
    return std::move(w.data());
}

CascadeStage read_stage(Reader& r) {
    CascadeStage st;
    st.level = r.i32();
    st.input_level = r.i32();
    st.regressor_level = r.i32();
    if (st.level <= st.input_level || st.input_level < 0 || st.level > 16)
        throw CorruptionError("model file: bad stage levels");
    geometry::MeanTemplate& t = st.tmpl;
    t.level = r.i32();
    t.width = r.i32();
    t.height = r.i32();
    t.domain_mask = r.bytes();
    t.dense_bases = r.doubles();
    t.landmark_bases = r.matrix();
    t.mean_landmarks = r.points();
    t.prior = r.tensor();
    st.has_regressor = r.u8() != 0;
    st.regressor.R = r.matrix();
    st.regressor.phi_bar = r.vector();
    st.regressor.J = r.matrix();
    binet::BiNetConfig c;
    const int cascade_index = r.i32();
    c.prior_channels = r.i32();
    c.branch_depth = r.i32();
    c.gate_depth = r.i32();
    c.width_scale = r.f64();
    const int mode = r.i32();
    if (mode < 0 || mode > 2) throw CorruptionError("model file: bad gate mode");
    c.mode = static_cast<binet::GateMode>(mode);
    c.rates.pretrain_hidden = r.f64();
    c.rates.pretrain_last = r.f64();
    c.rates.joint_hidden = r.f64();
    c.rates.joint_last = r.f64();
    c.gate_lr_multiplier = r.f64();
    auto common = read_stack(r);
    auto hf = read_stack(r);
    auto gate = read_stack(r);
    try {
        st.net = binet::GatedBiNet::with_layers(c, cascade_index, std::move(common), std::move(hf),
                                                std::move(gate));
    } catch (const ShapeError& e) {
        throw CorruptionError(std::string("model file: ") + e.what());
    }
    return st;
}

void write_section(Writer& out, const char tag[4], const std::vector<std::uint8_t>& payload) {
    for (int i = 0; i < 4; ++i) out.u8(static_cast<std::uint8_t>(tag[i]));
    out.u64(payload.size());
    out.data().insert(out.data().end(), payload.begin(), payload.end());
    out.u32(crc32_of(payload.data(), payload.size()));
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const CascadeModel& model) {
    Writer out;
    for (char c : kMagic) out.u8(static_cast<std::uint8_t>(c));
    out.u32(kModelVersion);
    out.u32(static_cast<std::uint32_t>(2 + model.stages.size()));
    const std::string cfg = config_to_json(model.config);
    write_section(out, "CONF", std::vector<std::uint8_t>(cfg.begin(), cfg.end()));
    write_section(out, "SHAP", shape_section(model.shape));
    for (const CascadeStage& st : model.stages) write_section(out, "STAG", stage_section(st));
    return std::move(out.data());
}

CascadeModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
    Reader in(bytes.data(), bytes.size());
    for (char c : kMagic)
        if (in.u8() != static_cast<std::uint8_t>(c)) throw CorruptionError("not a model file (bad magic)");
    const std::uint32_t version = in.u32();
    if (version != kModelVersion)
        throw VersionError("model file version " + std::to_string(version) + ", expected " +
                           std::to_string(kModelVersion));
    const std::uint32_t sections = in.u32();
    if (sections < 2) throw CorruptionError("model file: missing sections");

    CascadeModel model;
    for (std::uint32_t s = 0; s < sections; ++s) {
        char tag[5] = {};
        for (int i = 0; i < 4; ++i) tag[i] = static_cast<char>(in.u8());
        const std::size_t len = in.count(1);
        const std::vector<std::uint8_t> payload = [&] {
            std::vector<std::uint8_t> p(len);
            for (std::size_t i = 0; i < len; ++i) p[i] = in.u8();
            return p;
        }();
        if (in.u32() != crc32_of(payload.data(), payload.size()))
            throw CorruptionError(std::string("model file: checksum mismatch in section ") + tag);
        Reader r(payload.data(), payload.size());
        const std::string t(tag);
        if (s == 0 && t == "CONF") {
            try {
                model.config = config_from_json(std::string(payload.begin(), payload.end()));
            } catch (const ParseError& e) {
                throw CorruptionError(std::string("model file: bad configuration: ") + e.what());
            }
        } else if (s == 1 && t == "SHAP") {
            model.shape = read_shape(r, model.config.frame);
        } else if (s >= 2 && t == "STAG") {
            model.stages.push_back(read_stage(r));
        } else {
            throw CorruptionError("model file: unexpected section " + t);
        }
        if (t != "CONF" && !r.done()) throw CorruptionError("model file: trailing bytes in section " + t);
    }
    if (!in.done()) throw CorruptionError("model file: trailing bytes");
    if (model.stages.empty()) throw CorruptionError("model file: no stages");
    return model;
}

void save_model(const fs::path& path, const CascadeModel& model) {
    const std::vector<std::uint8_t> bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing model " + path.string());
}

CascadeModel load_model(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

std::string model_checksum(const CascadeModel& model) {
    // Not CRC-32: sections end in their own CRC, so a whole-file CRC is constant.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : serialize_model(model)) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace cbn::io
