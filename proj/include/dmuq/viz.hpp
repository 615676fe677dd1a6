#pragma once

#include <string>
#include <vector>

#include "dmuq/detector.hpp"
#include "dmuq/scenegen.hpp"

namespace dmuq {

// Render one frame as a self-contained SVG: ground-truth boxes in green,
// predicted boxes in red, per-corner 95% covariance ellipses in orange
// (semi-axes sqrt(5.991 * eigenvalue) along the eigenvectors), and agent
// positions as dots. World y points up; the page is y-flipped.
void render_frame_svg(const std::string& path, const Frame& frame,
                      const std::vector<Detection>& detections, const SceneConfig& scene);

}  // namespace dmuq
