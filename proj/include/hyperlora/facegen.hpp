#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperlora/config.hpp"
#include "hyperlora/tensor.hpp"

namespace hyperlora {

enum class FaceShape : uint8_t { kOval = 0, kRound = 1, kSquare = 2 };
enum class HairStyle : uint8_t { kShort = 0, kLong = 1, kBald = 2, kCurly = 3 };

constexpr int kFaceShapeCount = 3;
constexpr int kHairStyleCount = 4;

// Ground-truth identity: the analytic attribute vector every rendered image
// of a subject is generated from.
struct IdentityAttrs {
    float skin_tone = 0.5f;                       // [0,1]
    std::array<float, 3> hair_color{0, 0, 0};     // [0,1]^3
    std::array<float, 3> eye_color{0, 0, 0};      // [0,1]^3
    FaceShape face_shape = FaceShape::kOval;
    HairStyle hair_style = HairStyle::kShort;

    nlohmann::json to_json() const;
    static IdentityAttrs from_json(const nlohmann::json& j);
};

// Deterministic in seed; marginals uniform over ranges/enums.
IdentityAttrs sample_identity(uint64_t seed);

// Normalised attribute distance in [0,1]: mean over the five fields, with
// continuous fields L1-normalised and categorical fields scored 0/1.
float attr_distance(const IdentityAttrs& a, const IdentityAttrs& b);

const std::vector<std::string>& builtin_styles();  // photo, sketch, invert, sepia

// Pure pixel transform from the photo render to the styled render.
Tensor apply_style(const Tensor& photo, const std::string& style);

// 32x32x3 render in [-1,1] (CHW): face ellipse per shape, eyes, mouth, hair
// region per style/colour, composited with 4x supersampling, then the style
// transform. Pose jitter (sub-pixel shift and slight scale) comes from the
// jitter seed.
Tensor render(const IdentityAttrs& attrs, const std::string& style, uint64_t jitter_seed, float jitter = 1.0f);

// Analytic inverse-rendering oracle: recovers skin tone from a clean photo
// render by averaging a patch at the face centre.
float extract_skin_tone(const Tensor& photo);

struct ManifestRecord {
    std::string subject_id;
    uint64_t seed = 0;  // identity seed
    IdentityAttrs attrs;
    std::string style;
    std::string caption;
    std::string path;   // relative to the manifest directory
    std::string split;  // pretrain | hyper-train | hyper-val | held-out
};

struct CorpusManifest {
    std::vector<ManifestRecord> records;
    std::string root;  // directory holding manifest.jsonl and images/

    std::vector<ManifestRecord> split(const std::string& name) const;
    std::vector<std::string> subjects(const std::string& split_name) const;  // unique ids, stable order
    const ManifestRecord& find(const std::string& subject_id, const std::string& style) const;
    std::string image_path(const ManifestRecord& rec) const;
};

// Renders the full corpus under out_dir (images/ + manifest.jsonl). The
// pretrain split gets every identity x style image captioned
// "a face in <style> style"; hyper and held-out splits get one clean photo
// reference per subject. Rebuilding with the same config is byte-identical.
CorpusManifest build_corpus(const Config& cfg, const std::string& out_dir, bool overwrite = false);

CorpusManifest load_manifest(const std::string& dir);

}  // namespace hyperlora
