#include "centerface/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "centerface/seed.hpp"

namespace centerface {

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 5> kSkin{{
    {0.96, 0.80, 0.69},
    {0.87, 0.67, 0.53},
    {0.76, 0.57, 0.42},
    {0.55, 0.38, 0.26},
    {0.98, 0.87, 0.77},
}};

constexpr std::array<Rgb, 6> kMaskPalette{{
    {0.55, 0.75, 0.95},  // surgical blue
    {0.95, 0.95, 0.95},  // white
    {0.10, 0.10, 0.12},  // black
    {0.30, 0.70, 0.40},  // green
    {0.15, 0.20, 0.50},  // navy
    {0.60, 0.60, 0.65},  // gray
}};

constexpr int kPlacementRetries = 100;

struct Canvas {
    ImageTensor& img;

    void put(int x, int y, const Rgb& c) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        for (int ch = 0; ch < 3; ++ch) img(ch, y, x) = c[ch];
    }

    // Filled ellipse with center (cx, cy) and radii (rx, ry), clipped by keep(x, y).
    template <class Keep>
    void ellipse(double cx, double cy, double rx, double ry, const Rgb& c, Keep keep) {
        const int x0 = static_cast<int>(std::floor(cx - rx));
        const int x1 = static_cast<int>(std::ceil(cx + rx));
        const int y0 = static_cast<int>(std::floor(cy - ry));
        const int y1 = static_cast<int>(std::ceil(cy + ry));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dx = (x + 0.5 - cx) / rx;
                const double dy = (y + 0.5 - cy) / ry;
                if (dx * dx + dy * dy <= 1.0 && keep(x + 0.5, y + 0.5)) put(x, y, c);
            }
        }
    }
    void ellipse(double cx, double cy, double rx, double ry, const Rgb& c) {
        ellipse(cx, cy, rx, ry, c, [](double, double) { return true; });
    }
};

bool overlaps(const BBox& a, const BBox& b, double gap) {
    return a.x1 < b.x2 + gap && b.x1 < a.x2 + gap && a.y1 < b.y2 + gap && b.y1 < a.y2 + gap;
}

void draw_face(Canvas& canvas, const BBox& box, bool masked, bool occluded, std::mt19937_64& rng,
               std::mt19937_64& hand_rng) {
    std::uniform_int_distribution<std::size_t> skin_pick(0, kSkin.size() - 1);
    std::uniform_int_distribution<std::size_t> mask_pick(0, kMaskPalette.size() - 1);

    const double w = box.width(), h = box.height();
    const double cx = (box.x1 + box.x2) / 2, cy = (box.y1 + box.y2) / 2;
    const Rgb skin = kSkin[skin_pick(rng)];
    canvas.ellipse(cx, cy, w / 2, h / 2, skin);

    const Rgb eye{0.08, 0.06, 0.05};
    const double eye_r = std::max(1.0, 0.08 * w);
    canvas.ellipse(box.x1 + 0.32 * w, box.y1 + 0.38 * h, eye_r, eye_r, eye);
    canvas.ellipse(box.x1 + 0.68 * w, box.y1 + 0.38 * h, eye_r, eye_r, eye);

    if (masked) {
        const Rgb color = kMaskPalette[mask_pick(rng)];
        const double top = cy + 0.02 * h;
        canvas.ellipse(cx, cy, w / 2, h / 2, color, [&](double x, double y) {
            return y >= top && x >= box.x1 + 0.08 * w && x <= box.x2 - 0.08 * w;
        });
        return;
    }

    const Rgb mouth{0.55, 0.12, 0.12};
    canvas.ellipse(cx, box.y1 + 0.74 * h, 0.18 * w, std::max(0.8, 0.05 * h), mouth);

    if (occluded) {
        // A hand: different skin tone, off-center, over the lower face.
        Rgb hand = kSkin[skin_pick(hand_rng)];
        std::uniform_real_distribution<double> shift(-0.12, 0.12);
        const double hx = cx + shift(hand_rng) * w;
        canvas.ellipse(hx, box.y1 + 0.76 * h, 0.36 * w, 0.22 * h, hand);
        const Rgb crease{hand[0] * 0.8, hand[1] * 0.8, hand[2] * 0.8};
        for (int k = -1; k <= 1; ++k) {
            const int x = static_cast<int>(std::round(hx + k * 0.15 * w));
            for (double y = box.y1 + 0.62 * h; y < box.y1 + 0.80 * h; y += 1.0) {
                canvas.put(x, static_cast<int>(y), crease);
            }
        }
    }
}

}  // namespace

void SceneSpec::validate() const {
    grid().validate();
    if (min_objects < 0 || max_objects < min_objects) throw InputError("bad object count range");
    if (min_size < 2 || max_size < min_size) throw InputError("bad object size range");
    if (max_size * 1.3 >= std::min(height, width)) throw InputError("objects larger than image");
    for (double p : {masked_probability, confuser_probability}) {
        if (!(p >= 0 && p <= 1)) throw InputError("probabilities must lie in [0, 1]");
    }
    if (!(noise >= 0)) throw InputError("noise amplitude must be >= 0");
}

Sample generate_scene(const SceneSpec& spec, std::uint64_t index) {
    spec.validate();
    std::mt19937_64 rng(derive_seed(spec.seed, "scene", index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Sample sample;
    sample.image = ImageTensor(3, spec.height, spec.width);

    // Background: linear gradient between two muted colors.
    Rgb c0, c1;
    for (int ch = 0; ch < 3; ++ch) {
        c0[ch] = 0.15 + 0.6 * unit(rng);
        c1[ch] = 0.15 + 0.6 * unit(rng);
    }
    const double angle = unit(rng) * 6.283185307179586;
    const double ux = std::cos(angle), uy = std::sin(angle);
    const double half = 0.5 * std::hypot(spec.width, spec.height);
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const double t = std::clamp(
                0.5 + ((x - spec.width / 2.0) * ux + (y - spec.height / 2.0) * uy) / (2 * half), 0.0,
                1.0);
            for (int ch = 0; ch < 3; ++ch) sample.image(ch, y, x) = (1 - t) * c0[ch] + t * c1[ch];
        }
    }

    std::uniform_int_distribution<int> count_pick(spec.min_objects, spec.max_objects);
    std::uniform_int_distribution<int> size_pick(spec.min_size, spec.max_size);
    const int wanted = count_pick(rng);
    const double min_center_dist = 3.0 * spec.stride;

    Canvas canvas{sample.image};
    for (int n = 0; n < wanted; ++n) {
        const int w = size_pick(rng);
        const int h = static_cast<int>(std::round(w * (1.0 + 0.3 * unit(rng))));
        std::uniform_int_distribution<int> xs(0, spec.width - w);
        std::uniform_int_distribution<int> ys(0, spec.height - h);
        for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
            const int x = xs(rng), y = ys(rng);
            BBox box{double(x), double(y), double(x + w), double(y + h), 0};
            const Keypoint c = center_of(box);
            const bool clash = std::any_of(sample.boxes.begin(), sample.boxes.end(), [&](const BBox& o) {
                const Keypoint oc = center_of(o);
                return overlaps(box, o, 1.0) ||
                       std::hypot(c.px - oc.px, c.py - oc.py) < min_center_dist;
            });
            if (clash) continue;
            const bool masked = unit(rng) < spec.masked_probability;
            const bool occluded = !masked && unit(rng) < spec.confuser_probability;
            box.class_id = masked ? static_cast<int>(ClassId::MaskedFace) : static_cast<int>(ClassId::Face);
            // Separate stream: toggling confusers leaves the rest of the scene unchanged.
            std::mt19937_64 hand_rng(derive_seed(spec.seed, "hand", index * 64 + n));
            draw_face(canvas, box, masked, occluded, rng, hand_rng);
            sample.boxes.push_back(box);
            sample.occluded.push_back(occluded);
            break;
        }
    }

    std::uniform_real_distribution<double> jitter(-spec.noise, spec.noise);
    for (double& v : sample.image.data) v = std::clamp(v + jitter(rng), 0.0, 1.0);
    return sample;
}

std::vector<Sample> generate_dataset(const SceneSpec& spec, int n_images) {
    if (n_images < 1) throw InputError("n_images must be >= 1");
    std::vector<Sample> out;
    out.reserve(n_images);
    for (int k = 0; k < n_images; ++k) out.push_back(generate_scene(spec, static_cast<std::uint64_t>(k)));
    return out;
}

}  // namespace centerface
