#include "nestlm/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace nestlm::svg {

Svg::Svg(double width, double height) : width_(width), height_(height) {}

void Svg::rect(double x, double y, double w, double h, const std::string& fill,
               const std::string& stroke) {
  body_ << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << h
        << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
}

void Svg::line(double x1, double y1, double x2, double y2, const std::string& stroke,
               double width, bool dashed) {
  body_ << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
        << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\"";
  if (dashed) body_ << " stroke-dasharray=\"5,4\"";
  body_ << "/>\n";
}

void Svg::text(double x, double y, const std::string& s, double size, const std::string& anchor,
               const std::string& fill) {
  body_ << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"" << size
        << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\" fill=\"" << fill
        << "\">" << s << "</text>\n";
}

void Svg::polyline(const std::string& points, const std::string& stroke, double width,
                   bool dashed) {
  body_ << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << stroke
        << "\" stroke-width=\"" << width << "\"";
  if (dashed) body_ << " stroke-dasharray=\"5,4\"";
  body_ << "/>\n";
}

void Svg::comment(const std::string& s) { body_ << "<!-- " << s << " -->\n"; }

std::string Svg::str() const {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
     << height_ << "\" viewBox=\"0 0 " << width_ << " " << height_ << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
     << body_.str() << "</svg>\n";
  return os.str();
}

void Svg::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << str();
}

std::string heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
  double r, g, b;
  if (v < 0.5) {
    double t = v / 0.5;
    r = lerp(68, 33, t);
    g = lerp(1, 145, t);
    b = lerp(84, 140, t);
  } else {
    double t = (v - 0.5) / 0.5;
    r = lerp(33, 253, t);
    g = lerp(145, 231, t);
    b = lerp(140, 37, t);
  }
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(r), static_cast<int>(g),
                static_cast<int>(b));
  return buf;
}

}  // namespace nestlm::svg
