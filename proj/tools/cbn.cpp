// Command-line front end: train, hallucinate, evaluate, degrade, inspect, synth.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>

#include "cbn/cascade.hpp"
#include "cbn/degrade.hpp"
#include "cbn/io.hpp"
#include "cbn/kernels.hpp"
#include "cbn/parallel.hpp"
#include "cbn/synth.hpp"

namespace fs = std::filesystem;
using namespace cbn;

namespace {

std::mutex log_mu;

void log_line(const std::string& msg) {
    std::lock_guard lock(log_mu);
    std::cerr << msg << '\n';
}

int default_workers() {
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

cascade::CascadeConfig resolve_config(const std::string& path) {
    cascade::CascadeConfig cfg = path.empty() ? cascade::CascadeConfig{} : io::load_config(path);
    return io::apply_env_overrides(cfg);
}

std::vector<io::ManifestRecord> filter_split(const io::Manifest& m, const std::string& split) {
    std::vector<io::ManifestRecord> out;
    for (const auto& r : m.records)
        if (split.empty() || r.split == split) out.push_back(r);
    return out;
}

std::vector<cascade::FaceRecord> load_faces(const io::Manifest& m, const std::string& split) {
    std::vector<cascade::FaceRecord> out;
    for (const io::ManifestRecord& r : filter_split(m, split)) {
        cascade::FaceRecord f;
        f.id = r.id;
        f.image = io::read_image(m.resolve(r)).y;
        f.eye_left = r.eye_left;
        f.eye_right = r.eye_right;
        f.landmarks = r.landmarks;
        out.push_back(std::move(f));
    }
    return out;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string config, landmarks, faces, model, split = "train";
    std::int64_t seed = -1;
};

int run_train(const TrainArgs& a) {
    cascade::CascadeConfig cfg = resolve_config(a.config);
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    const io::Manifest lm = io::load_manifest(a.landmarks);
    cascade::TrainingSets sets;
    sets.landmark_set = load_faces(lm, a.split);
    sets.hallucination_set = a.faces.empty() ? sets.landmark_set : load_faces(io::load_manifest(a.faces), a.split);
    log_line("training on " + std::to_string(sets.landmark_set.size()) + " annotated and " +
             std::to_string(sets.hallucination_set.size()) + " hallucination faces (kernels: " +
             std::string(kernels::active().name) + ")");
    const cascade::CascadeModel model = cascade::train_cascade(sets, cfg, log_line);
    io::save_model(a.model, model);
    std::cout << "model " << a.model << " checksum " << io::model_checksum(model) << '\n';
    return 0;
}

// ---- hallucinate ----------------------------------------------------------

struct HallucinateArgs {
    std::string model, manifest, image, out, split;
    std::vector<double> eyes;
    int workers = default_workers();
    bool trace = false;
};

void dump_trace(const fs::path& dir, const std::string& stem, const cascade::TraceRecord& t) {
    nlohmann::ordered_json j;
    j["to_canonical"] = {{"scale", t.to_canonical.scale},
                         {"angle", t.to_canonical.angle},
                         {"tx", t.to_canonical.tx},
                         {"ty", t.to_canonical.ty}};
    j["stages"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < t.stages.size(); ++k) {
        const cascade::StageTrace& s = t.stages[k];
        nlohmann::ordered_json st;
        st["level"] = s.level;
        st["p"] = std::vector<double>(s.p.p.data(), s.p.p.data() + s.p.p.size());
        nlohmann::ordered_json lm = nlohmann::ordered_json::array();
        for (Point2 q : s.landmarks) lm.push_back({q.x, q.y});
        st["landmarks"] = lm;
        j["stages"].push_back(st);
        const std::string prefix = stem + ".stage" + std::to_string(k + 1);
        io::write_pgm(dir / (prefix + ".output.pgm"), s.output);
        io::write_pgm(dir / (prefix + ".gate.pgm"), s.G_lambda);
    }
    std::ofstream(dir / (stem + ".trace.json")) << j.dump(2) << '\n';
}

int run_hallucinate(const HallucinateArgs& a) {
    const cascade::CascadeModel model = io::load_model(a.model);
    const fs::path out(a.out);
    ensure_dir(out);

    struct Job {
        std::string id;
        fs::path path;
        Point2 eye_left, eye_right;
    };
    std::vector<Job> jobs;
    if (!a.manifest.empty()) {
        const io::Manifest m = io::load_manifest(a.manifest);
        for (const auto& r : filter_split(m, a.split)) jobs.push_back({r.id, m.resolve(r), r.eye_left, r.eye_right});
    } else {
        if (a.eyes.size() != 4) throw ArgumentError("--eyes needs four numbers: xl,yl,xr,yr");
        jobs.push_back({fs::path(a.image).stem().string(), a.image, {a.eyes[0], a.eyes[1]}, {a.eyes[2], a.eyes[3]}});
    }

    std::atomic<int> failures{0};
    parallel_for(jobs.size(), a.workers, [&](std::size_t i) {
        const Job& job = jobs[i];
        const std::string stem = io::sanitize_name(job.id);
        try {
            const io::ColorImage in = io::read_image(job.path);
            const cascade::HallucinationOutput res =
                cascade::hallucinate(model, in.y, job.eye_left, job.eye_right);
            io::ColorImage result{res.image, {}, {}};
            if (in.is_color()) {
                const int F = model.total_factor();
                result.cb = upscale(in.cb, F);
                result.cr = upscale(in.cr, F);
            }
            io::write_image(out / (stem + (in.is_color() ? ".ppm" : ".pgm")), result);
            if (a.trace) dump_trace(out, stem, res.trace);
        } catch (const std::exception& e) {
            ++failures;
            log_line("error: " + job.id + ": " + e.what());
        }
    });
    std::cout << "hallucinated " << jobs.size() - failures << " of " << jobs.size() << " faces into " << out << '\n';
    return failures == 0 ? 0 : 1;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateArgs {
    std::string pred, manifest, out, split;
    int workers = default_workers();
};

int run_evaluate(const EvaluateArgs& a) {
    io::Manifest m = io::load_manifest(a.manifest);
    m.records = filter_split(m, a.split);
    const metrics::ScoreReport report = io::score_run(a.pred, m, a.workers);
    if (!a.out.empty()) {
        std::ofstream f(a.out);
        if (!f) throw IoError("cannot write report " + a.out);
        f << report.csv();
    } else {
        std::cout << report.csv();
    }
    std::cout << report.summary();
    for (const auto& row : report.rows)
        if (!row.error.empty()) log_line("error: " + row.id + ": " + row.error);
    return report.failed == 0 ? 0 : 1;
}

// ---- degrade --------------------------------------------------------------

struct DegradeArgs {
    std::string manifest, out, split;
    double target = 0.0, factor = 0.0, sigma = 0.0, eta = 0.0;
    std::int64_t seed = 0;
};

int run_degrade(const DegradeArgs& a) {
    const io::Manifest m = io::load_manifest(a.manifest);
    const fs::path out(a.out);
    ensure_dir(out);
    io::Manifest result;
    result.base_dir = out;
    const auto records = filter_split(m, a.split);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const io::ManifestRecord& r = records[i];
        DegradationSpec spec;
        spec.target_pxiod = a.target;
        spec.factor = a.factor;
        spec.sigma = a.sigma;
        spec.eta = a.eta;
        spec.seed = static_cast<std::uint64_t>(a.seed) + i;
        const Image src = io::read_image(m.resolve(r)).y;
        const Degraded d = degrade(src, r.eye_left, r.eye_right, r.landmarks, spec);
        io::ManifestRecord nr = r;
        nr.image = io::sanitize_name(r.id) + ".pgm";
        nr.eye_left = d.eye_left;
        nr.eye_right = d.eye_right;
        nr.landmarks = d.landmarks;
        io::write_pgm(out / nr.image, d.image);
        result.records.push_back(std::move(nr));
    }
    io::save_manifest(out / "manifest.jsonl", result);
    std::cout << "degraded " << records.size() << " faces into " << out << '\n';
    return 0;
}

// ---- inspect --------------------------------------------------------------

std::string plan_string(const std::vector<int>& plan) {
    std::string s;
    for (std::size_t i = 0; i < plan.size(); ++i) s += (i ? " " : "") + std::to_string(plan[i]);
    return s;
}

std::string stack_plan(const std::vector<nn::ConvLayer>& stack) {
    std::vector<int> plan;
    for (const auto& l : stack) plan.push_back(l.out_channels());
    return plan_string(plan);
}

int run_inspect(const std::string& model_path, const std::string& config_path) {
    if (model_path.empty()) {
        const cascade::CascadeConfig cfg = resolve_config(config_path);
        std::cout << "configuration (defaults, then --config, then CBN_* environment):\n"
                  << io::config_to_json(cfg);
        std::cout << "environment overrides: CBN_<KEY_PATH>, e.g. " << io::env_name("schedule.base_lr") << '\n';
        return 0;
    }
    const cascade::CascadeModel model = io::load_model(model_path);
    const cascade::CascadeConfig& cfg = model.config;
    std::cout << "model " << model_path << " (version " << io::kModelVersion << ", checksum "
              << io::model_checksum(model) << ")\n"
              << "K=" << model.stages.size() << '\n'
              << "input pxIOD " << cfg.input_pxiod() << ", output pxIOD "
              << cfg.input_pxiod() * model.total_factor() << '\n'
              << "shape model: " << model.shape.num_landmarks() << " landmarks, "
              << model.shape.num_bases() << " bases\n";
    for (std::size_t k = 0; k < model.stages.size(); ++k) {
        const cascade::CascadeStage& st = model.stages[k];
        std::cout << "stage " << k + 1 << ": level " << st.input_level << " -> " << st.level << " ("
                  << st.tmpl.width << "x" << st.tmpl.height << "), prior channels "
                  << (st.tmpl.prior.empty() ? 0 : st.tmpl.prior.channels()) << ", regressor "
                  << (st.has_regressor ? "yes" : "no") << '\n'
                  << "  common branch: " << stack_plan(st.net.common()) << '\n'
                  << "  hf branch:     " << stack_plan(st.net.hf()) << '\n'
                  << "  gate:          " << stack_plan(st.net.gate()) << '\n'
                  << "  parameters:    " << st.net.parameter_count() << '\n';
    }
    std::cout << "configuration:\n" << io::config_to_json(cfg);
    return 0;
}

// ---- upscale --------------------------------------------------------------

struct UpscaleArgs {
    std::string manifest, out, split;
    int factor = 4;
};

int run_upscale(const UpscaleArgs& a) {
    if (a.factor < 1) throw ArgumentError("--factor must be >= 1");
    const io::Manifest m = io::load_manifest(a.manifest);
    const fs::path out(a.out);
    ensure_dir(out);
    const auto records = filter_split(m, a.split);
    for (const io::ManifestRecord& r : records) {
        const io::ColorImage in = io::read_image(m.resolve(r));
        io::ColorImage up{upscale(in.y, a.factor), {}, {}};
        if (in.is_color()) {
            up.cb = upscale(in.cb, a.factor);
            up.cr = upscale(in.cr, a.factor);
        }
        io::write_image(out / (io::sanitize_name(r.id) + (in.is_color() ? ".ppm" : ".pgm")), up);
    }
    std::cout << "upscaled " << records.size() << " faces into " << out << '\n';
    return 0;
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string out;
    int count = 100;
    int width = 48, height = 48;
    double iod = 20.0;
    double rotation = 0.0, scale_jitter = 0.0, shift_jitter = 0.0;
    std::string split = "train";
    std::int64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    const fs::path out(a.out);
    ensure_dir(out);
    synth::FaceSpec spec;
    spec.width = a.width;
    spec.height = a.height;
    const Point2 mid{0.5 * a.width, 0.375 * a.height};
    spec.eye_left = mid - Point2{0.5 * a.iod, 0.0};
    spec.eye_right = mid + Point2{0.5 * a.iod, 0.0};
    spec.max_rotation_deg = a.rotation;
    spec.scale_jitter = a.scale_jitter;
    spec.shift_jitter = a.shift_jitter;
    io::Manifest m;
    m.base_dir = out;
    for (int i = 0; i < a.count; ++i) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(a.seed) * 1000003ULL + static_cast<std::uint64_t>(i));
        const synth::SynthFace f = synth::render_face(spec, rng);
        char id[32];
        std::snprintf(id, sizeof id, "face%05d", i);
        io::ManifestRecord r{id, std::string(id) + ".pgm", f.eye_left, f.eye_right, f.landmarks, a.split};
        io::write_pgm(out / r.image, f.image);
        m.records.push_back(std::move(r));
    }
    io::save_manifest(out / "manifest.jsonl", m);
    std::cout << "rendered " << a.count << " faces into " << out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Face hallucination with cascaded gated bi-networks"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a cascade model");
    train->add_option("--config", ta.config, "JSON configuration file");
    train->add_option("--landmarks", ta.landmarks, "manifest of annotated faces")->required();
    train->add_option("--faces", ta.faces, "manifest of faces for the bi-networks (default: --landmarks)");
    train->add_option("--model", ta.model, "output model file")->required();
    train->add_option("--seed", ta.seed, "override the configured seed");
    train->add_option("--split", ta.split, "manifest split to use (empty for all)");

    HallucinateArgs ha;
    auto* hall = app.add_subcommand("hallucinate", "super-resolve low-resolution faces");
    hall->add_option("--model", ha.model, "model file")->required();
    auto* man = hall->add_option("--manifest", ha.manifest, "manifest of input faces");
    auto* img = hall->add_option("--image", ha.image, "single input image");
    hall->add_option("--eyes", ha.eyes, "eye centers for --image: xl yl xr yr")->expected(4)->delimiter(',');
    man->excludes(img);
    hall->add_option("--out", ha.out, "output directory")->required();
    hall->add_option("--workers", ha.workers, "worker threads");
    hall->add_option("--split", ha.split, "manifest split to use (empty for all)");
    hall->add_flag("--trace", ha.trace, "write per-stage trace dumps");

    EvaluateArgs ea;
    auto* eval = app.add_subcommand("evaluate", "score predictions against ground truth");
    eval->add_option("--pred", ea.pred, "directory of predictions")->required();
    eval->add_option("--manifest", ea.manifest, "manifest of ground-truth faces")->required();
    eval->add_option("--out", ea.out, "CSV report path (stdout when omitted)");
    eval->add_option("--workers", ea.workers, "worker threads");
    eval->add_option("--split", ea.split, "manifest split to use (empty for all)");

    DegradeArgs da;
    auto* deg = app.add_subcommand("degrade", "synthesize low-resolution inputs");
    deg->add_option("--manifest", da.manifest, "manifest of source faces")->required();
    deg->add_option("--out", da.out, "output directory")->required();
    auto* tgt = deg->add_option("--target-pxiod", da.target, "target inter-ocular distance in pixels");
    auto* fac = deg->add_option("--factor", da.factor, "fixed downsampling factor");
    tgt->excludes(fac);
    deg->add_option("--sigma", da.sigma, "Gaussian blur sigma before downsampling");
    deg->add_option("--eta", da.eta, "noise standard deviation on the 8-bit scale");
    deg->add_option("--seed", da.seed, "noise seed");
    deg->add_option("--split", da.split, "manifest split to use (empty for all)");

    std::string inspect_model, inspect_config;
    auto* insp = app.add_subcommand("inspect", "print a model summary, or the effective configuration");
    insp->add_option("--model", inspect_model, "model file");
    insp->add_option("--config", inspect_config, "configuration file (without --model)");

    UpscaleArgs ua;
    auto* ups = app.add_subcommand("upscale", "bicubic baseline at an integer factor");
    ups->add_option("--manifest", ua.manifest, "manifest of input faces")->required();
    ups->add_option("--out", ua.out, "output directory")->required();
    ups->add_option("--factor", ua.factor, "upscaling factor");
    ups->add_option("--split", ua.split, "manifest split to use (empty for all)");

    SynthArgs sa;
    auto* syn = app.add_subcommand("synth", "render synthetic annotated faces");
    syn->add_option("--out", sa.out, "output directory")->required();
    syn->add_option("--count", sa.count, "number of faces");
    syn->add_option("--width", sa.width, "image width");
    syn->add_option("--height", sa.height, "image height");
    syn->add_option("--iod", sa.iod, "inter-ocular distance in pixels");
    syn->add_option("--rotation", sa.rotation, "maximum in-plane rotation, degrees");
    syn->add_option("--scale-jitter", sa.scale_jitter, "relative scale jitter");
    syn->add_option("--shift-jitter", sa.shift_jitter, "translation jitter, pixels");
    syn->add_option("--split", sa.split, "split tag written to the manifest");
    syn->add_option("--seed", sa.seed, "random seed");

    CLI11_PARSE(app, argc, argv);
    retain_freed_memory();

    try {
        if (*train) return run_train(ta);
        if (*hall) {
            if (ha.manifest.empty() && ha.image.empty()) throw ArgumentError("give --manifest or --image");
            return run_hallucinate(ha);
        }
        if (*eval) return run_evaluate(ea);
        if (*deg) {
            if (da.target <= 0.0 && da.factor <= 0.0) throw ArgumentError("give --target-pxiod or --factor");
            return run_degrade(da);
        }
        if (*insp) return run_inspect(inspect_model, inspect_config);
        if (*ups) return run_upscale(ua);
        if (*syn) return run_synth(sa);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
