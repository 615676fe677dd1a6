#include "dmuq/viz.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <numbers>
#include <string>

#include "dmuq/error.hpp"
#include "dmuq/matrix.hpp"

namespace dmuq {

namespace {

constexpr double kPage = 640.0;      // SVG edge, pixels
constexpr double kChi2_95_2d = 5.991;  // 95% quantile of chi-square, 2 dof

struct Mapper {
    double scale;
    double world;

    double sx(double x) const { return x * scale; }
    double sy(double y) const { return (world - y) * scale; }  // y-flip
};

void append(std::string& out, const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof buf, fmt, args);
    va_end(args);
    out += buf;
}

void append_quad(std::string& out, const Quad& q, const Mapper& m, const char* color,
                 double width) {
    append(out, "  <polygon points=\"");
    for (size_t i = 0; i < 4; ++i)
        append(out, "%s%.3f,%.3f", i ? " " : "", m.sx(q[i].x), m.sy(q[i].y));
    append(out, "\" fill=\"none\" stroke=\"%s\" stroke-width=\"%.3f\"/>\n", color, width);
}

// Per-corner 2x2 covariance of a detection, whichever variant it carries.
CovMatrix corner_cov(const BoxUncertainty& u, int corner) {
    CovMatrix c(2);
    switch (u.variant) {
        case CovVariant::IMG:
            return u.corners[static_cast<size_t>(corner)].cov;
        case CovVariant::ISG:
            c.at(0, 0) = u.variances[static_cast<size_t>(2 * corner)];
            c.at(1, 1) = u.variances[static_cast<size_t>(2 * corner + 1)];
            return c;
        case CovVariant::DMG:
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                    c.at(a, b) = u.joint_cov.at(2 * corner + a, 2 * corner + b);
            return c;
        case CovVariant::None:
            break;
    }
    raise(ErrorCategory::Usage, "detection carries no covariance to render");
}

void append_ellipse(std::string& out, const Vec2& center, const CovMatrix& cov, const Mapper& m) {
    std::array<double, 2> values{};
    std::array<std::array<double, 2>, 2> vectors{};
    eigen_2x2(cov, values, vectors);
    const double r0 = std::sqrt(std::max(values[0], 0.0) * kChi2_95_2d) * m.scale;
    const double r1 = std::sqrt(std::max(values[1], 0.0) * kChi2_95_2d) * m.scale;
    // Rotate the page x-axis onto eigenvector 0; the page is y-flipped, so
    // the world angle negates.
    const double angle = -std::atan2(vectors[0][1], vectors[0][0]) * 180.0 / std::numbers::pi;
    const double cx = m.sx(center.x);
    const double cy = m.sy(center.y);
    append(out,
           "  <ellipse cx=\"%.3f\" cy=\"%.3f\" rx=\"%.3f\" ry=\"%.3f\" "
           "transform=\"rotate(%.3f %.3f %.3f)\" fill=\"none\" stroke=\"#f90\" "
           "stroke-width=\"1.200\"/>\n",
           cx, cy, r0, r1, angle, cx, cy);
}

}  // namespace

void render_frame_svg(const std::string& path, const Frame& frame,
                      const std::vector<Detection>& detections, const SceneConfig& scene) {
    const Mapper m{kPage / scene.world_size, scene.world_size};
    std::string svg;
    append(svg,
           "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
           "viewBox=\"0 0 %.0f %.0f\">\n",
           kPage, kPage, kPage, kPage);
    append(svg, "  <rect width=\"%.0f\" height=\"%.0f\" fill=\"#ffffff\"/>\n", kPage, kPage);

    for (const auto& box : frame.boxes) append_quad(svg, box.corners, m, "#2e8b57", 2.0);
    for (const auto& det : detections) {
        append_quad(svg, det.corners, m, "#d22", 1.5);
        if (det.uncertainty.variant != CovVariant::None)
            for (int i = 0; i < kCorners; ++i)
                append_ellipse(svg, det.corners[static_cast<size_t>(i)],
                               corner_cov(det.uncertainty, i), m);
    }
    for (const auto& pose : frame.agent_poses)
        append(svg, "  <circle cx=\"%.3f\" cy=\"%.3f\" r=\"4.000\" fill=\"#36c\"/>\n",
               m.sx(pose.x), m.sy(pose.y));
    svg += "</svg>\n";

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) raise(ErrorCategory::Io, "cannot open '" + path + "' for writing");
    std::fwrite(svg.data(), 1, svg.size(), f);
    if (std::fclose(f) != 0) raise(ErrorCategory::Io, "failed to write '" + path + "'");
}

}  // namespace dmuq
