#pragma once

#include <vector>

#include "iapl/errors.hpp"
#include "iapl/image.hpp"
#include "iapl/rng.hpp"

namespace iapl {

enum class ViewKind { GlobalResize, Crop, CropResize };

struct ViewOrigin {
    ViewKind kind = ViewKind::GlobalResize;
    int x = 0, y = 0, side = 0;
    bool flipped = false;
};

struct ViewSet {
    std::vector<Image> views;
    std::vector<ViewOrigin> origins;

    size_t count() const { return views.size(); }
};

// View 0 is the full image resized to view_size. The remaining n_views-1 are
// random square crops, each flipped with probability 0.5. Images narrower
// than view_size fall back to crops of side uniform in [min_side/2, min_side]
// that are then resized up.
inline ViewSet generate_views(const Image& img, int n_views, int view_size, Rng& rng) {
    if (n_views < 1) throw ArgumentError("generate_views: n_views must be >= 1");
    if (view_size < 1) throw ArgumentError("generate_views: view_size must be >= 1");
    ViewSet vs;
    vs.views.reserve(n_views);
    vs.origins.reserve(n_views);

    vs.views.push_back(resize_bilinear(img, view_size, view_size));
    vs.origins.push_back(ViewOrigin{ViewKind::GlobalResize, 0, 0, 0, false});

    bool direct = img.min_side() >= view_size;
    for (int i = 1; i < n_views; ++i) {
        ViewOrigin o;
        Image v;
        if (direct) {
            o.kind = ViewKind::Crop;
            o.side = view_size;
            o.x = rng.uniform_int(0, img.width - view_size);
            o.y = rng.uniform_int(0, img.height - view_size);
            v = crop(img, o.y, o.x, view_size);
        } else {
            o.kind = ViewKind::CropResize;
            int lo = std::max(1, img.min_side() / 2);
            o.side = rng.uniform_int(lo, img.min_side());
            o.x = rng.uniform_int(0, img.width - o.side);
            o.y = rng.uniform_int(0, img.height - o.side);
            v = resize_bilinear(crop(img, o.y, o.x, o.side), view_size, view_size);
        }
        o.flipped = rng.bernoulli(0.5);
        if (o.flipped) v = hflip(v);
        vs.views.push_back(std::move(v));
        vs.origins.push_back(o);
    }
    return vs;
}

}  // namespace iapl
