#pragma once

#include "wsdfm/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace wsdfm {

/// One scatter panel: a titled two-token dataset.
struct ScatterPanel {
  std::string title;
  Dataset data;
};

/// Points drawn per panel before deterministic stride subsampling kicks in.
inline constexpr Eigen::Index kMaxScatterPoints = 5000;

/// Render side-by-side scatter panels of two-token datasets as a
/// self-contained SVG document (one <circle> per drawn point). Datasets
/// larger than max_points are subsampled at a fixed stride (indices 0,
/// stride, 2·stride, …), so the same input always renders the same bytes.
std::string scatter_svg(const std::vector<ScatterPanel>& panels,
                        Eigen::Index max_points = kMaxScatterPoints);

/// scatter_svg + atomic write.
void write_scatter_svg(const std::filesystem::path& path,
                       const std::vector<ScatterPanel>& panels,
                       Eigen::Index max_points = kMaxScatterPoints);

}  // namespace wsdfm
