#pragma once

#include <array>
#include <cmath>
#include <algorithm>
#include <vector>

namespace dmuq {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2() = default;
    Vec2(double px, double py) : x(px), y(py) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2& operator+=(const Vec2& o) {
        x += o.x;
        y += o.y;
        return *this;
    }
    double norm() const { return std::sqrt(x * x + y * y); }
};

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline double dist(const Vec2& a, const Vec2& b) { return (a - b).norm(); }

using Quad = std::array<Vec2, 4>;

// Signed area via the shoelace formula; positive for counterclockwise rings.
inline double signed_area(const std::vector<Vec2>& poly) {
    double s = 0.0;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        s += p.x * q.y - q.x * p.y;
    }
    return 0.5 * s;
}

inline double signed_area(const Quad& q) {
    return signed_area(std::vector<Vec2>(q.begin(), q.end()));
}

// Clip a convex polygon against one half-plane (keep the left side of a→b);
// Sutherland–Hodgman step. Both polygons must be CCW.
inline std::vector<Vec2> clip_half_plane(const std::vector<Vec2>& poly, const Vec2& a,
                                         const Vec2& b) {
    std::vector<Vec2> out;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        const double sp = cross(b - a, p - a);
        const double sq = cross(b - a, q - a);
        if (sp >= 0.0) out.push_back(p);
        if ((sp > 0.0 && sq < 0.0) || (sp < 0.0 && sq > 0.0)) {
            const double t = sp / (sp - sq);
            out.push_back(p + (q - p) * t);
        }
    }
    return out;
}

// Intersection of two convex CCW polygons (Sutherland–Hodgman).
inline std::vector<Vec2> clip_convex(const std::vector<Vec2>& subject,
                                     const std::vector<Vec2>& clip) {
    std::vector<Vec2> poly = subject;
    const size_t n = clip.size();
    for (size_t i = 0; i < n && !poly.empty(); ++i)
        poly = clip_half_plane(poly, clip[i], clip[(i + 1) % n]);
    return poly;
}

// Deterministic corner order for pairing predicted and labeled corners:
// counterclockwise, starting at the lowest-y corner (ties: lowest x). Box
// labels carry a semantic order (rear-left first) whose front/rear identity
// is invisible in an occupancy raster; pairing by this geometric order keeps
// per-corner regression targets single-moded.
inline Quad canonical_corners(const Quad& q) {
    Quad c = q;
    if (signed_area(c) < 0.0) std::reverse(c.begin(), c.end());
    size_t start = 0;
    for (size_t i = 1; i < 4; ++i) {
        if (c[i].y < c[start].y || (c[i].y == c[start].y && c[i].x < c[start].x)) start = i;
    }
    std::rotate(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(start), c.end());
    return c;
}

// Cyclic shift of `target` that minimizes the summed squared corner distance
// to `reference` (ties resolved toward the smaller shift). A box is the same
// point set under any rotation of its corner labels, so predicted and labeled
// corners are paired by whichever rotation agrees best with the prediction —
// no fixed start corner stays continuous across all box orientations.
inline Quad align_corner_order(const Quad& target, const Quad& reference) {
    size_t best = 0;
    double best_ssd = 0.0;
    for (size_t s = 0; s < 4; ++s) {
        double ssd = 0.0;
        for (size_t i = 0; i < 4; ++i) {
            const Vec2 d = target[(i + s) % 4] - reference[i];
            ssd += d.x * d.x + d.y * d.y;
        }
        if (s == 0 || ssd < best_ssd) {
            best = s;
            best_ssd = ssd;
        }
    }
    Quad out;
    for (size_t i = 0; i < 4; ++i) out[i] = target[(i + best) % 4];
    return out;
}

// Point-in-convex-polygon test; the ring may be CW or CCW.
inline bool point_in_convex(const Vec2& p, const Quad& poly) {
    int sign = 0;
    for (size_t i = 0; i < 4; ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % 4];
        double c = cross(b - a, p - a);
        if (c > 1e-12) {
            if (sign < 0) return false;
            sign = 1;
        } else if (c < -1e-12) {
            if (sign > 0) return false;
            sign = -1;
        }
    }
    return true;
}

}  // namespace dmuq
