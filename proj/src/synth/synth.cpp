#include "cbn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace cbn::synth {
namespace {

using geometry::Landmarks;

constexpr double kPi = std::numbers::pi;

bool inside_polygon(const std::vector<Point2>& poly, Point2 p) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point2 a = poly[i], b = poly[j];
        if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
    }
    return in;
}

double segment_distance(Point2 p, Point2 a, Point2 b) {
    const Point2 ab = b - a, ap = p - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    const double t = len2 > 0.0 ? std::clamp((ap.x * ab.x + ap.y * ab.y) / len2, 0.0, 1.0) : 0.0;
    return distance(p, a + ab * t);
}

double polyline_distance(const std::vector<Point2>& line, Point2 p) {
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < line.size(); ++i) d = std::min(d, segment_distance(p, line[i], line[i + 1]));
    return d;
}

std::vector<Point2> pick(const Landmarks& pts, int first, int last) {
    return {pts.begin() + first, pts.begin() + last + 1};
}

Point2 mean_of(const Landmarks& pts, int first, int last) {
    Point2 c;
    for (int i = first; i <= last; ++i) c = c + pts[i];
    return c * (1.0 / (last - first + 1));
}

struct Box {
    double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
    explicit Box(const std::vector<Point2>& pts, double pad = 0.0) {
        for (Point2 p : pts) {
            x0 = std::min(x0, p.x - pad);
            y0 = std::min(y0, p.y - pad);
            x1 = std::max(x1, p.x + pad);
            y1 = std::max(y1, p.y + pad);
        }
    }
    bool contains(Point2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

// Sum of a few random plane waves; smooth texture with unit-ish amplitude.
struct Waves {
    std::array<double, 4> fx{}, fy{}, phase{}, amp{};

    Waves(std::mt19937_64& rng, double min_freq, double max_freq) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t i = 0; i < fx.size(); ++i) {
            const double f = min_freq + (max_freq - min_freq) * u(rng);
            const double a = 2.0 * kPi * u(rng);
            fx[i] = f * std::cos(a);
            fy[i] = f * std::sin(a);
            phase[i] = 2.0 * kPi * u(rng);
            amp[i] = 0.5 + 0.5 * u(rng);
        }
    }
    double operator()(Point2 p) const {
        double s = 0.0;
        for (std::size_t i = 0; i < fx.size(); ++i)
            s += amp[i] * std::sin(2.0 * kPi * (fx[i] * p.x + fy[i] * p.y) + phase[i]);
        return s / static_cast<double>(fx.size());
    }
};

// Appearance parameters of one face, drawn once per render.
struct Look {
    double background, bg_gx, bg_gy;
    double skin, light_x, light_y;
    double brow_dark, brow_width;
    double sclera, iris, iris_radius;
    Point2 gaze;
    double lip_dark, mouth_inside;
    double nostril_dark;
    bool hair;
    double hair_tone, hairline;
};

Look draw_look(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto in = [&](double a, double b) { return a + (b - a) * u(rng); };
    Look l;
    l.background = in(0.05, 0.95);
    l.bg_gx = in(-0.15, 0.15);
    l.bg_gy = in(-0.15, 0.15);
    l.skin = in(0.35, 0.8);
    l.light_x = in(-0.12, 0.12);
    l.light_y = in(-0.06, 0.06);
    l.brow_dark = in(0.18, 0.4);
    l.brow_width = in(0.05, 0.09);
    l.sclera = in(0.7, 0.92);
    l.iris = in(0.08, 0.4);
    l.iris_radius = in(0.065, 0.085);
    l.gaze = {in(-0.03, 0.03), in(-0.01, 0.01)};
    l.lip_dark = in(0.08, 0.22);
    l.mouth_inside = in(0.03, 0.15);
    l.nostril_dark = in(0.2, 0.35);
    l.hair = u(rng) < 0.75;
    l.hair_tone = in(0.03, 0.45);
    l.hairline = in(-0.75, -0.5);
    return l;
}

}  // namespace

Landmarks mean_shape() {
    Landmarks s(68);
    // Jaw: half ellipse from the left temple through the chin.
    for (int i = 0; i <= 16; ++i) {
        const double t = kPi * i / 16.0;
        s[i] = {-0.95 * std::cos(t), 0.1 + 1.35 * std::sin(t)};
    }
    // Brows, left then right, arched.
    for (int i = 0; i < 5; ++i) {
        const double t = i / 4.0;
        const double arch = 0.1 * std::sin(kPi * (0.15 + 0.85 * t));
        s[17 + i] = {-0.88 + 0.7 * t, -0.3 - arch};
        s[26 - i] = {0.88 - 0.7 * t, -0.3 - arch};
    }
    // Nose bridge and base.
    for (int i = 0; i < 4; ++i) s[27 + i] = {0.0, 0.05 + 0.17 * i};
    const std::array<Point2, 5> base{{{-0.2, 0.62}, {-0.1, 0.66}, {0.0, 0.68}, {0.1, 0.66}, {0.2, 0.62}}};
    for (int i = 0; i < 5; ++i) s[31 + i] = base[i];
    // Eyes.
    const std::array<Point2, 6> eye{{{-0.2, 0.0}, {-0.07, -0.075}, {0.07, -0.075}, {0.2, 0.0}, {0.07, 0.065}, {-0.07, 0.065}}};
    for (int i = 0; i < 6; ++i) {
        s[36 + i] = Point2{-0.5, 0.0} + eye[i];
        // Mirror so that 42 is the inner corner of the right eye.
        const Point2 m{-eye[(3 - i + 6) % 6].x, eye[(3 - i + 6) % 6].y};
        s[42 + i] = Point2{0.5, 0.0} + m;
    }
    // Mouth, outer then inner contour.
    const std::array<Point2, 12> outer{{{-0.4, 1.0}, {-0.25, 0.93}, {-0.1, 0.9}, {0.0, 0.92}, {0.1, 0.9}, {0.25, 0.93},
                                        {0.4, 1.0}, {0.25, 1.1}, {0.1, 1.14}, {0.0, 1.15}, {-0.1, 1.14}, {-0.25, 1.1}}};
    for (int i = 0; i < 12; ++i) s[48 + i] = outer[i];
    const std::array<Point2, 8> inner{{{-0.33, 1.0}, {-0.1, 0.97}, {0.0, 0.97}, {0.1, 0.97},
                                       {0.33, 1.0}, {0.1, 1.03}, {0.0, 1.03}, {-0.1, 1.03}}};
    for (int i = 0; i < 8; ++i) s[60 + i] = inner[i];
    // Re-center so the eye centers sit exactly at (-0.5, 0) and (0.5, 0).
    const Point2 le = mean_of(s, 36, 41), re = mean_of(s, 42, 47);
    const Similarity t = similarity_from_pairs(le, re, {-0.5, 0.0}, {0.5, 0.0});
    for (Point2& p : s) p = t.apply(p);
    return s;
}

Landmarks sample_shape(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Landmarks s = mean_shape();
    const double face_w = 1.0 + 0.06 * n(rng);
    const double jaw_len = 1.0 + 0.06 * n(rng);
    const double eye_size = 1.0 + 0.12 * n(rng);
    const double eye_open = std::max(0.3, 1.0 + 0.25 * n(rng));
    const double brow_up = 0.05 * n(rng);
    const double nose_len = 0.05 * n(rng);
    const double mouth_w = 1.0 + 0.08 * n(rng);
    const double mouth_open = std::max(0.0, 0.05 * n(rng) + 0.01);
    const double mouth_y = 0.04 * n(rng);
    const double smile = 0.04 * n(rng);
    const double yaw = 0.05 * n(rng);

    for (int i = 0; i <= 16; ++i) {
        s[i].x *= face_w;
        if (s[i].y > 0.1) s[i].y = 0.1 + (s[i].y - 0.1) * jaw_len;
        s[i].x += yaw * (1.0 - std::abs(s[i].x)) * 0.5;
    }
    for (int i = 17; i <= 26; ++i) s[i].y -= brow_up;
    for (int i = 27; i <= 35; ++i) {
        s[i].y += nose_len * (i >= 31 ? 1.0 : (i - 27) / 3.0);
        s[i].x += yaw;
    }
    for (int e = 0; e < 2; ++e) {
        const Point2 c = mean_of(s, 36 + 6 * e, 41 + 6 * e);
        for (int i = 36 + 6 * e; i <= 41 + 6 * e; ++i) {
            const Point2 d = s[i] - c;
            s[i] = c + Point2{d.x * eye_size, d.y * eye_size * eye_open};
        }
    }
    const Point2 mc = mean_of(s, 48, 59);
    for (int i = 48; i <= 67; ++i) {
        Point2 d = s[i] - mc;
        d.x *= mouth_w;
        const bool lower = (i >= 55 && i <= 59) || (i >= 65 && i <= 67);
        if (lower) d.y += mouth_open;
        const double corner = std::pow(std::abs(d.x) / 0.4, 2.0);
        d.y -= smile * corner;
        s[i] = mc + d + Point2{yaw * 0.8, mouth_y};
    }
    for (Point2& p : s) p = p + Point2{0.006 * n(rng), 0.006 * n(rng)};
    return s;
}

Image render_shape(const Landmarks& landmarks, int width, int height, std::mt19937_64& rng,
                   int supersample, double pixel_noise) {
    if (landmarks.size() != 68) throw DimensionError("render_shape: expects 68 landmarks");
    if (supersample < 1) throw ArgumentError("render_shape: supersample must be >= 1");
    // Work in face units: eye centers at (-0.5, 0) and (0.5, 0).
    const Point2 le = mean_of(landmarks, 36, 41), re = mean_of(landmarks, 42, 47);
    const Similarity to_face = similarity_from_pairs(le, re, {-0.5, 0.0}, {0.5, 0.0});
    Landmarks s;
    for (Point2 p : landmarks) s.push_back(to_face.apply(p));

    const Look look = draw_look(rng);
    const Waves skin_tex(rng, 0.6, 1.6), bg_tex(rng, 0.3, 1.2), hair_tex(rng, 3.0, 6.0);

    // Face outline: jaw plus a forehead arc back to the left temple.
    std::vector<Point2> face = pick(s, 0, 16);
    const Point2 l0 = s[0], l16 = s[16];
    const double half = 0.5 * (l16.x - l0.x);
    const double cx = 0.5 * (l0.x + l16.x), cy = 0.5 * (l0.y + l16.y);
    for (int i = 1; i < 12; ++i) {
        const double t = kPi * i / 12.0;
        face.push_back({cx + half * std::cos(t), cy - 1.1 * std::sin(t)});
    }
    const std::vector<Point2> brow_l = pick(s, 17, 21), brow_r = pick(s, 22, 26);
    const std::vector<Point2> eye_l = pick(s, 36, 41), eye_r = pick(s, 42, 47);
    const std::vector<Point2> lid_l = pick(s, 36, 39), lid_r = pick(s, 42, 45);
    const std::vector<Point2> mouth = pick(s, 48, 59), inner = pick(s, 60, 67);
    const std::vector<Point2> lip_line{s[60], s[61], s[62], s[63], s[64]};
    const Point2 iris_l = mean_of(s, 36, 41) + look.gaze, iris_r = mean_of(s, 42, 47) + look.gaze;
    const double eye_scale = 0.5 * (distance(s[36], s[39]) + distance(s[42], s[45])) / 0.4;
    const double iris_r_len = look.iris_radius * eye_scale;
    double inner_area = 0.0;
    for (std::size_t i = 0, j = inner.size() - 1; i < inner.size(); j = i++)
        inner_area += (inner[j].x + inner[i].x) * (inner[j].y - inner[i].y);
    const bool open_mouth = std::abs(0.5 * inner_area) > 0.004;
    const Point2 nostril_l = s[32] + Point2{0.0, -0.025}, nostril_r = s[34] + Point2{0.0, -0.025};

    const Box face_box(face), eye_box_l(eye_l, 0.02), eye_box_r(eye_r, 0.02), mouth_box(mouth, 0.03);
    const Box brow_box_l(brow_l, 0.1), brow_box_r(brow_r, 0.1);

    auto shade = [&](Point2 q) {
        double v = look.background + look.bg_gx * q.x + look.bg_gy * q.y + 0.05 * bg_tex(q);
        const bool in_face = face_box.contains(q) && inside_polygon(face, q);
        if (in_face) {
            v = look.skin + look.light_x * q.x + look.light_y * q.y + 0.03 * skin_tex(q);
            // Soft shading along the nose sides.
            const double nd = std::min(segment_distance(q, s[27], s[31]), segment_distance(q, s[27], s[35]));
            v -= 0.06 * std::exp(-nd * nd / (2.0 * 0.03 * 0.03));
            if (brow_box_l.contains(q) || brow_box_r.contains(q)) {
                const double bd = std::min(polyline_distance(brow_l, q), polyline_distance(brow_r, q));
                if (bd < 0.5 * look.brow_width) v -= look.brow_dark;
            }
            for (int e = 0; e < 2; ++e) {
                const Box& box = e == 0 ? eye_box_l : eye_box_r;
                if (!box.contains(q)) continue;
                const auto& poly = e == 0 ? eye_l : eye_r;
                if (inside_polygon(poly, q)) {
                    const double di = distance(q, e == 0 ? iris_l : iris_r);
                    v = di < 0.4 * iris_r_len ? 0.03 : di < iris_r_len ? look.iris : look.sclera;
                }
                if (polyline_distance(e == 0 ? lid_l : lid_r, q) < 0.018) v = 0.6 * std::min(v, look.skin) - 0.1;
            }
            for (Point2 n : {nostril_l, nostril_r}) {
                const double dx = (q.x - n.x) / 0.05, dy = (q.y - n.y) / 0.028;
                if (dx * dx + dy * dy < 1.0) v -= look.nostril_dark;
            }
            if (mouth_box.contains(q)) {
                if (inside_polygon(mouth, q)) v = look.skin - look.lip_dark + 0.02 * skin_tex(q * 3.0);
                if (open_mouth ? inside_polygon(inner, q) : polyline_distance(lip_line, q) < 0.012)
                    v = look.mouth_inside;
            }
        }
        if (look.hair) {
            // Hair cap over the top of the head, framing the temples.
            const double hx = (q.x - cx) / (half * 1.12), hy = (q.y - cy + 0.05) / 1.25;
            const bool in_head = hx * hx + hy * hy < 1.0;
            const double line = look.hairline - 0.25 * std::cos(kPi * 0.5 * std::clamp(q.x / half, -1.0, 1.0)) + 0.25;
            if (in_head && (q.y < line || !in_face) && q.y < 0.35)
                v = look.hair_tone + 0.05 * hair_tex(q);
        }
        return v;
    };

    const Similarity from_px = to_face;
    Image out(width, height);
    const double step = 1.0 / supersample;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int sy = 0; sy < supersample; ++sy)
                for (int sx = 0; sx < supersample; ++sx)
                    acc += shade(from_px.apply({x + (sx + 0.5) * step, y + (sy + 0.5) * step}));
            out.at(x, y) = acc / (supersample * supersample);
        }
    }
    if (pixel_noise > 0.0) {
        std::normal_distribution<double> noise(0.0, pixel_noise);
        for (double& v : out.pixels()) v += noise(rng);
    }
    clamp_unit(out);
    return out;
}

SynthFace render_face(const FaceSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Landmarks shape = sample_shape(rng);
    const double rot = spec.max_rotation_deg * std::numbers::pi / 180.0 * u(rng);
    const double scale = 1.0 + spec.scale_jitter * u(rng);
    const Point2 shift{spec.shift_jitter * u(rng), spec.shift_jitter * u(rng)};
    // Place the eyes, then apply the jitter about their midpoint.
    const Similarity place = similarity_from_pairs(mean_of(shape, 36, 41), mean_of(shape, 42, 47),
                                                   spec.eye_left, spec.eye_right);
    const Point2 mid = (spec.eye_left + spec.eye_right) * 0.5;
    const Similarity jitter{scale, rot, 0.0, 0.0};
    SynthFace f;
    for (Point2 p : shape) {
        const Point2 q = place.apply(p) - mid;
        f.landmarks.push_back(jitter.apply(q) + mid + shift);
    }
    f.eye_left = jitter.apply(spec.eye_left - mid) + mid + shift;
    f.eye_right = jitter.apply(spec.eye_right - mid) + mid + shift;
    f.image = render_shape(f.landmarks, spec.width, spec.height, rng, spec.supersample, spec.pixel_noise);
    return f;
}

}  // namespace cbn::synth
