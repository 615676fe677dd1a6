#pragma once

#include <string>
#include <vector>

#include "dmuq/config.hpp"
#include "dmuq/eval.hpp"

namespace dmuq {

// One cell of the evaluation grid: a collaboration mode ("lb", "inter",
// "early") and an uncertainty-method token ("none", "dm", "mbb", "doublem",
// optionally with a variant suffix such as "doublem-isg").
struct GridCell {
    std::string mode;
    std::string method;
};

// The canonical 12-cell grid: 3 modes x 4 methods.
std::vector<GridCell> default_grid();

// Ablation cells appended automatically when their artifacts exist.
std::vector<GridCell> ablation_grid();

// Artifact base name for a cell, e.g. "doublem-inter" -> doublem-inter.ckpt.
std::string cell_artifact_base(const GridCell& cell);

// Evaluate one cell against the test split; present=false when the cell's
// artifacts are missing from artifacts_dir.
MetricRow evaluate_cell(const GridCell& cell, const RunConfig& cfg, const Dataset& test_set,
                        const std::string& artifacts_dir);

// Fill the grid: the 12 canonical rows always appear (missing artifacts
// leave explicit gap rows); ablation rows are appended for every ablation
// cell whose checkpoint exists. Pass an explicit cell list to restrict the
// grid.
MetricReport run_benchmark(const RunConfig& cfg, const Dataset& test_set,
                           const std::string& artifacts_dir,
                           const std::vector<GridCell>& cells = {});

}  // namespace dmuq
