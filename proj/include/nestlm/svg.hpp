#pragma once

#include <sstream>
#include <string>

namespace nestlm::svg {

// Minimal SVG writer for the heatmaps and trace plots.
class Svg {
 public:
  Svg(double width, double height);

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke = "none");
  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0, bool dashed = false);
  void text(double x, double y, const std::string& s, double size = 10,
            const std::string& anchor = "middle", const std::string& fill = "#000");
  void polyline(const std::string& points, const std::string& stroke, double width = 1.0,
                bool dashed = false);
  void comment(const std::string& s);

  void save(const std::string& path) const;
  std::string str() const;

 private:
  double width_, height_;
  std::ostringstream body_;
};

// 0..1 -> hex color on a dark-blue -> teal -> yellow ramp
std::string heat_color(double v);

}  // namespace nestlm::svg
