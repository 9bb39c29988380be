#include "wsdfm/svg.hpp"

#include "wsdfm/io.hpp"
#include "wsdfm/two_moons.hpp"

#include <cmath>
#include <sstream>

namespace wsdfm {

namespace {

constexpr int kPanelSize = 420;
constexpr int kPanelGap = 24;
constexpr int kMargin = 20;
constexpr int kTitleHeight = 28;

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string scatter_svg(const std::vector<ScatterPanel>& panels,
                        Eigen::Index max_points) {
  if (panels.empty()) {
    throw ValidationError("scatter_svg: at least one panel required");
  }
  if (max_points < 1) {
    throw ValidationError("scatter_svg: max_points must be >= 1");
  }
  for (const auto& p : panels) {
    p.data.validate();
    if (p.data.spec.n_tokens != 2) {
      throw ValidationError("scatter_svg: panels require n_tokens == 2");
    }
  }

  const int n_panels = static_cast<int>(panels.size());
  const int width =
      2 * kMargin + n_panels * kPanelSize + (n_panels - 1) * kPanelGap;
  const int height = 2 * kMargin + kTitleHeight + kPanelSize;

  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
     << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height
     << "\" fill=\"white\"/>\n";

  for (int p = 0; p < n_panels; ++p) {
    const auto& panel = panels[static_cast<std::size_t>(p)];
    const int x0 = kMargin + p * (kPanelSize + kPanelGap);
    const int y0 = kMargin + kTitleHeight;
    os << "<g>\n";
    os << "<text x=\"" << x0 + kPanelSize / 2 << "\" y=\"" << kMargin + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"15\" fill=\"#333\">"
       << escape_xml(panel.title) << "</text>\n";
    os << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kPanelSize
       << "\" height=\"" << kPanelSize
       << "\" fill=\"#fafafa\" stroke=\"#999\"/>\n";

    const Eigen::Index n = panel.data.size();
    const Eigen::Index stride =
        n > max_points ? (n + max_points - 1) / max_points : 1;
    const int vocab = panel.data.spec.vocab;
    for (Eigen::Index i = 0; i < n; i += stride) {
      const double ux = dequantize_coord(panel.data.samples(i, 0), vocab);
      const double uy = dequantize_coord(panel.data.samples(i, 1), vocab);
      // Unit y grows upward; SVG y grows downward.
      const double px = x0 + ux * kPanelSize;
      const double py = y0 + (1.0 - uy) * kPanelSize;
      os << "<circle cx=\"" << px << "\" cy=\"" << py
         << "\" r=\"1.6\" fill=\"#1f6fb2\" fill-opacity=\"0.55\"/>\n";
    }
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_scatter_svg(const std::filesystem::path& path,
                       const std::vector<ScatterPanel>& panels,
                       Eigen::Index max_points) {
  atomic_write(path, scatter_svg(panels, max_points));
}

}  // namespace wsdfm
