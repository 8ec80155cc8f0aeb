#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "alcn/eval.hpp"
#include "alcn/tensor.hpp"

namespace alcn {

/// PNG with one row per tensor (each (B, C, H, W), values in [0, 1]) and at
/// most max_cols images per row, separated by a 2-pixel gap.
void write_image_grid(const std::filesystem::path& path, const std::vector<Tensor<float>>& rows,
                      std::size_t max_cols = 8);

/// ROC curves of every class in the report plus the chance diagonal.
void write_roc_plot(const std::filesystem::path& path, const EvalReport& report, int size = 480);

}  // namespace alcn
