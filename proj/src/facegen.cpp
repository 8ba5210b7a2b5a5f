#include "hyperlora/facegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "hyperlora/png_io.hpp"
#include "hyperlora/rng.hpp"

namespace hyperlora {

namespace fs = std::filesystem;

nlohmann::json IdentityAttrs::to_json() const {
    return {{"skin_tone", skin_tone},
            {"hair_color", hair_color},
            {"eye_color", eye_color},
            {"face_shape", static_cast<int>(face_shape)},
            {"hair_style", static_cast<int>(hair_style)}};
}

IdentityAttrs IdentityAttrs::from_json(const nlohmann::json& j) {
    IdentityAttrs a;
    a.skin_tone = j.at("skin_tone").get<float>();
    a.hair_color = j.at("hair_color").get<std::array<float, 3>>();
    a.eye_color = j.at("eye_color").get<std::array<float, 3>>();
    a.face_shape = static_cast<FaceShape>(j.at("face_shape").get<int>());
    a.hair_style = static_cast<HairStyle>(j.at("hair_style").get<int>());
    return a;
}

IdentityAttrs sample_identity(uint64_t seed) {
    Rng rng(seed);
    IdentityAttrs a;
    a.skin_tone = rng.uniform();
    for (auto& c : a.hair_color) c = rng.uniform();
    for (auto& c : a.eye_color) c = rng.uniform();
    a.face_shape = static_cast<FaceShape>(rng.next_below(kFaceShapeCount));
    a.hair_style = static_cast<HairStyle>(rng.next_below(kHairStyleCount));
    return a;
}

float attr_distance(const IdentityAttrs& a, const IdentityAttrs& b) {
    float skin = std::fabs(a.skin_tone - b.skin_tone);
    float hair = 0.0f, eye = 0.0f;
    for (int i = 0; i < 3; ++i) {
        hair += std::fabs(a.hair_color[static_cast<size_t>(i)] - b.hair_color[static_cast<size_t>(i)]);
        eye += std::fabs(a.eye_color[static_cast<size_t>(i)] - b.eye_color[static_cast<size_t>(i)]);
    }
    hair /= 3.0f;
    eye /= 3.0f;
    float shape = a.face_shape == b.face_shape ? 0.0f : 1.0f;
    float style = a.hair_style == b.hair_style ? 0.0f : 1.0f;
    return (skin + hair + eye + shape + style) / 5.0f;
}

const std::vector<std::string>& builtin_styles() {
    static const std::vector<std::string> styles = {"photo", "sketch", "invert", "sepia"};
    return styles;
}

namespace {

constexpr int kRes = 32;
constexpr int kSS = 4;  // supersampling factor

struct Rgb {
    float r, g, b;
};

Rgb lerp(const Rgb& a, const Rgb& b, float t) {
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb skin_rgb(float tone) { return lerp({0.98f, 0.86f, 0.72f}, {0.38f, 0.24f, 0.13f}, tone); }

float luminance(const Rgb& c) { return 0.299f * c.r + 0.587f * c.g + 0.114f * c.b; }

}  // namespace

Tensor apply_style(const Tensor& photo, const std::string& style) {
    if (photo.shape().rank != 3 || photo.shape()[0] != 3) throw ShapeError("apply_style expects [3,H,W]");
    if (style == "photo") return photo;
    const int64_t h = photo.shape()[1], w = photo.shape()[2];
    Tensor out(photo.shape());
    if (style == "invert") {
        for (int64_t i = 0; i < photo.numel(); ++i) out.at(i) = -photo.at(i);
        return out;
    }
    // remaining styles work on [0,1] luminance
    auto lum01 = [&](int64_t y, int64_t x) {
        float r = (photo.at((0 * h + y) * w + x) + 1.0f) * 0.5f;
        float g = (photo.at((1 * h + y) * w + x) + 1.0f) * 0.5f;
        float b = (photo.at((2 * h + y) * w + x) + 1.0f) * 0.5f;
        return luminance({r, g, b});
    };
    if (style == "sepia") {
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                float l = lum01(y, x);
                const float tint[3] = {1.15f, 0.86f, 0.55f};
                for (int c = 0; c < 3; ++c) {
                    float v = std::min(1.0f, l * tint[c]);
                    out.at((c * h + y) * w + x) = v * 2.0f - 1.0f;
                }
            }
        return out;
    }
    if (style == "sketch") {
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                auto at = [&](int64_t yy, int64_t xx) {
                    yy = std::clamp<int64_t>(yy, 0, h - 1);
                    xx = std::clamp<int64_t>(xx, 0, w - 1);
                    return lum01(yy, xx);
                };
                float gx = at(y - 1, x + 1) + 2.0f * at(y, x + 1) + at(y + 1, x + 1) - at(y - 1, x - 1) -
                           2.0f * at(y, x - 1) - at(y + 1, x - 1);
                float gy = at(y + 1, x - 1) + 2.0f * at(y + 1, x) + at(y + 1, x + 1) - at(y - 1, x - 1) -
                           2.0f * at(y - 1, x) - at(y - 1, x + 1);
                float edge = std::sqrt(gx * gx + gy * gy);
                float v = std::clamp(1.0f - 1.8f * edge, 0.0f, 1.0f);
                for (int c = 0; c < 3; ++c) out.at((c * h + y) * w + x) = v * 2.0f - 1.0f;
            }
        return out;
    }
    throw ValidationError("unknown style '" + style + "'");
}

Tensor render(const IdentityAttrs& attrs, const std::string& style, uint64_t jitter_seed, float jitter) {
    Rng jrng(jitter_seed);
    const float jx = jrng.uniform(-jitter, jitter);
    const float jy = jrng.uniform(-jitter, jitter);
    const float js = jrng.uniform(0.96f, 1.04f);

    const float cx = 16.0f + jx, cy = 17.0f + jy;
    float ax = 8.0f, ay = 10.5f, power = 2.0f;
    switch (attrs.face_shape) {
        case FaceShape::kOval: ax = 7.2f * js; ay = 10.5f * js; power = 2.0f; break;
        case FaceShape::kRound: ax = 9.2f * js; ay = 9.2f * js; power = 2.0f; break;
        case FaceShape::kSquare: ax = 7.8f * js; ay = 10.0f * js; power = 4.0f; break;
    }
    const Rgb bg{0.80f, 0.81f, 0.83f};
    const Rgb skin = skin_rgb(attrs.skin_tone);
    const Rgb hair{attrs.hair_color[0], attrs.hair_color[1], attrs.hair_color[2]};
    const Rgb eye{attrs.eye_color[0], attrs.eye_color[1], attrs.eye_color[2]};
    const Rgb sclera{0.96f, 0.96f, 0.94f};
    const Rgb pupil{0.05f, 0.05f, 0.06f};
    const Rgb mouth{0.55f, 0.23f, 0.20f};

    auto face_dist = [&](float x, float y) {
        const float dx = std::fabs(x - cx) / ax, dy = std::fabs(y - cy) / ay;
        return std::pow(dx, power) + std::pow(dy, power);
    };
    auto in_ellipse = [](float x, float y, float ex, float ey, float rx, float ry) {
        const float dx = (x - ex) / rx, dy = (y - ey) / ry;
        return dx * dx + dy * dy <= 1.0f;
    };

    auto shade = [&](float x, float y) -> Rgb {
        // hair mask, evaluated against a slightly enlarged face outline
        bool hair_px = false;
        const float hd = face_dist(x, y);
        switch (attrs.hair_style) {
            case HairStyle::kBald: break;
            case HairStyle::kShort:
                hair_px = hd <= 1.25f && y < cy - 5.2f;
                break;
            case HairStyle::kLong: {
                bool cap = hd <= 1.45f && y < cy - 4.6f;
                bool curtain = hd <= 1.55f && hd >= 0.78f && std::fabs(x - cx) > 0.55f * ax && y < cy + 8.5f;
                hair_px = cap || curtain;
                break;
            }
            case HairStyle::kCurly: {
                float scallop = 1.4f * std::sin(1.9f * x) * std::cos(0.9f * y);
                hair_px = hd <= 1.5f + 0.12f * std::sin(2.3f * x) && y < cy - 4.0f + scallop;
                break;
            }
        }

        // eyes sit above centre; draw order: eyes > hair > face > background
        const float eyl = cx - 3.6f, eyr = cx + 3.6f, eyy = cy - 2.8f;
        for (float ex : {eyl, eyr}) {
            if (in_ellipse(x, y, ex, eyy, 0.55f, 0.55f)) return pupil;
            if (in_ellipse(x, y, ex, eyy, 1.25f, 1.05f)) return eye;
            if (in_ellipse(x, y, ex, eyy, 2.1f, 1.25f)) return sclera;
        }
        if (hair_px) return hair;
        if (hd <= 1.0f) {
            if (in_ellipse(x, y, cx, cy + 5.6f, 2.9f, 0.8f)) return mouth;
            return skin;
        }
        return bg;
    };

    Tensor img(Shape{3, kRes, kRes});
    for (int y = 0; y < kRes; ++y)
        for (int x = 0; x < kRes; ++x) {
            float acc[3] = {0, 0, 0};
            for (int sy = 0; sy < kSS; ++sy)
                for (int sx = 0; sx < kSS; ++sx) {
                    const float fx = static_cast<float>(x) + (static_cast<float>(sx) + 0.5f) / kSS;
                    const float fy = static_cast<float>(y) + (static_cast<float>(sy) + 0.5f) / kSS;
                    Rgb c = shade(fx, fy);
                    acc[0] += c.r;
                    acc[1] += c.g;
                    acc[2] += c.b;
                }
            for (int c = 0; c < 3; ++c)
                img.at((c * kRes + y) * kRes + x) = acc[c] / (kSS * kSS) * 2.0f - 1.0f;
        }
    return style == "photo" ? img : apply_style(img, style);
}

float extract_skin_tone(const Tensor& photo) {
    // 3x3 patch centred between the eyes and the mouth; inverts the skin
    // colour ramp along its red-channel span
    const int64_t h = photo.shape()[1], w = photo.shape()[2];
    double r = 0.0;
    int count = 0;
    for (int64_t y = 17; y <= 19; ++y)
        for (int64_t x = 15; x <= 17; ++x) {
            if (y >= h || x >= w) continue;
            r += (photo.at((0 * h + y) * w + x) + 1.0) * 0.5;
            ++count;
        }
    r /= count;
    const double lo = 0.98, hi = 0.38;  // red channel at tone 0 and 1
    return std::clamp(static_cast<float>((r - lo) / (hi - lo)), 0.0f, 1.0f);
}

std::vector<ManifestRecord> CorpusManifest::split(const std::string& name) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
        if (r.split == name) out.push_back(r);
    return out;
}

std::vector<std::string> CorpusManifest::subjects(const std::string& split_name) const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& r : records)
        if (r.split == split_name && seen.insert(r.subject_id).second) out.push_back(r.subject_id);
    return out;
}

const ManifestRecord& CorpusManifest::find(const std::string& subject_id, const std::string& style) const {
    for (const auto& r : records)
        if (r.subject_id == subject_id && r.style == style) return r;
    throw ValidationError("manifest has no record for subject '" + subject_id + "' style '" + style + "'");
}

std::string CorpusManifest::image_path(const ManifestRecord& rec) const { return (fs::path(root) / rec.path).string(); }

CorpusManifest build_corpus(const Config& cfg, const std::string& out_dir, bool overwrite) {
    const int64_t n_identities = cfg.geti("corpus.n_identities");
    const int64_t n_pretrain = cfg.geti("corpus.n_pretrain");
    const int64_t n_train = cfg.geti("corpus.n_hyper_train");
    const int64_t n_val = cfg.geti("corpus.n_hyper_val");
    const int64_t n_held = cfg.geti("corpus.n_held_out");
    if (n_pretrain + n_train + n_val + n_held != n_identities)
        throw ValidationError("corpus splits must sum to n_identities");
    const std::vector<std::string> styles = cfg.get_list("corpus.styles");
    const float jitter = static_cast<float>(cfg.getf("corpus.jitter"));
    const uint64_t master = cfg.seed();

    const fs::path root(out_dir);
    if (fs::exists(root / "manifest.jsonl") && !overwrite)
        throw ValidationError("corpus already exists at '" + out_dir + "' (use overwrite)");
    fs::create_directories(root / "images");

    Rng rng(master);
    CorpusManifest manifest;
    manifest.root = out_dir;

    auto split_of = [&](int64_t i) -> std::string {
        if (i < n_pretrain) return "pretrain";
        if (i < n_pretrain + n_train) return "hyper-train";
        if (i < n_pretrain + n_train + n_val) return "hyper-val";
        return "held-out";
    };

    for (int64_t i = 0; i < n_identities; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "subj_%05lld", static_cast<long long>(i));
        const std::string sid(buf);
        const uint64_t id_seed = rng.stream(hash_name(sid)).seed();
        const IdentityAttrs attrs = sample_identity(id_seed);
        const std::string split_name = split_of(i);

        if (split_name == "pretrain") {
            for (const std::string& style : styles) {
                ManifestRecord rec;
                rec.subject_id = sid;
                rec.seed = id_seed;
                rec.attrs = attrs;
                rec.style = style;
                rec.caption = "a face in " + style + " style";
                rec.path = "images/" + sid + "_" + style + ".png";
                rec.split = split_name;
                const uint64_t jseed = Rng(id_seed).stream(hash_name("jitter/" + style)).seed();
                write_png((root / rec.path).string(), to_u8(render(attrs, style, jseed, jitter)));
                manifest.records.push_back(std::move(rec));
            }
        } else {
            ManifestRecord rec;
            rec.subject_id = sid;
            rec.seed = id_seed;
            rec.attrs = attrs;
            rec.style = "photo";
            rec.caption = "a [V] face";
            rec.path = "images/" + sid + "_ref.png";
            rec.split = split_name;
            const uint64_t jseed = Rng(id_seed).stream(hash_name("jitter/ref")).seed();
            write_png((root / rec.path).string(), to_u8(render(attrs, "photo", jseed, jitter)));
            manifest.records.push_back(std::move(rec));
        }
    }

    std::ofstream out(root / "manifest.jsonl", std::ios::trunc);
    if (!out) throw IoError("cannot write manifest under '" + out_dir + "'");
    for (const auto& r : manifest.records) {
        nlohmann::json j = {{"subject_id", r.subject_id}, {"seed", r.seed},   {"attrs", r.attrs.to_json()},
                            {"style", r.style},           {"caption", r.caption}, {"path", r.path},
                            {"split", r.split}};
        out << j.dump() << "\n";
    }
    return manifest;
}

CorpusManifest load_manifest(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.jsonl");
    if (!in) throw IoError("no manifest.jsonl under '" + dir + "'");
    CorpusManifest manifest;
    manifest.root = dir;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ManifestRecord r;
        r.subject_id = j.at("subject_id").get<std::string>();
        r.seed = j.at("seed").get<uint64_t>();
        r.attrs = IdentityAttrs::from_json(j.at("attrs"));
        r.style = j.at("style").get<std::string>();
        r.caption = j.at("caption").get<std::string>();
        r.path = j.at("path").get<std::string>();
        r.split = j.at("split").get<std::string>();
        manifest.records.push_back(std::move(r));
    }
    return manifest;
}

}  // namespace hyperlora
