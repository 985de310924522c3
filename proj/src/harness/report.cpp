#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ccv/harness.hpp"
#include "ccv/serialize.hpp"

namespace ccv::harness {

// --- CSV -------------------------------------------------------------------

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : path_(path), columns_(header.size()) {
  for (const std::string& h : header) *this << h;
  end_row();
}

CsvWriter& CsvWriter::operator<<(const std::string& cell) {
  if (cell_ >= columns_) throw std::logic_error("CsvWriter: too many cells in row of " + path_.string());
  if (cell_ > 0) buffer_ += ',';
  if (cell.find_first_of(",\"\n") != std::string::npos) {
    buffer_ += '"';
    for (char ch : cell) buffer_ += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    buffer_ += '"';
  } else {
    buffer_ += cell;
  }
  ++cell_;
  return *this;
}

CsvWriter& CsvWriter::operator<<(double v) {
  if (!std::isfinite(v)) throw NumericError("CsvWriter: non-finite value for " + path_.string());
  return *this << io::decimal(v);
}

CsvWriter& CsvWriter::operator<<(std::uint64_t v) { return *this << std::to_string(v); }

void CsvWriter::end_row() {
  if (cell_ != columns_) throw std::logic_error("CsvWriter: short row in " + path_.string());
  buffer_ += '\n';
  cell_ = 0;
}

void CsvWriter::close() {
  if (!path_.parent_path().empty()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream f(path_, std::ios::binary | std::ios::trunc);
  f << buffer_;
  if (!f) throw std::runtime_error("cannot write '" + path_.string() + "'");
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::out_of_range("csv: no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cells.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.emplace_back();
    } else {
      cells.back() += ch;
    }
  }
  return cells;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read '" + path.string() + "'");
  CsvTable t;
  std::string line;
  if (std::getline(f, line)) t.header = split_csv_line(line);
  while (std::getline(f, line)) {
    if (!line.empty()) t.rows.push_back(split_csv_line(line));
  }
  return t;
}

// --- statistics --------------------------------------------------------------

MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe r;
  r.n = xs.size();
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return r;
}

std::pair<double, double> curve_means(const std::vector<CurveRecord>& curve, std::size_t last) {
  if (curve.empty()) return {0.0, 0.0};
  double all = 0.0;
  for (const CurveRecord& r : curve) all += r.episode_return;
  all /= static_cast<double>(curve.size());
  const std::size_t k = std::min(last, curve.size());
  double tail = 0.0;
  for (std::size_t i = curve.size() - k; i < curve.size(); ++i) tail += curve[i].episode_return;
  return {all, tail / static_cast<double>(k)};
}

// --- plots -------------------------------------------------------------------

Series resample_smooth(const Series& s, std::size_t points, std::size_t window) {
  require_dims(s.x.size() == s.y.size(), "resample_smooth: x/y length mismatch");
  Series out{s.label, {}, {}};
  if (s.x.empty() || points == 0) return out;
  const double lo = s.x.front();
  const double hi = s.x.back();
  std::vector<double> y(points);
  out.x.resize(points);
  std::size_t k = 0;
  for (std::size_t p = 0; p < points; ++p) {
    const double x = points == 1 ? lo : lo + (hi - lo) * static_cast<double>(p) / static_cast<double>(points - 1);
    while (k + 1 < s.x.size() && s.x[k + 1] < x) ++k;
    double v = s.y[k];
    if (k + 1 < s.x.size() && s.x[k + 1] > s.x[k]) {
      const double t = std::clamp((x - s.x[k]) / (s.x[k + 1] - s.x[k]), 0.0, 1.0);
      v = s.y[k] + t * (s.y[k + 1] - s.y[k]);
    }
    out.x[p] = x;
    y[p] = v;
  }
  const std::size_t half = window / 2;
  out.y.resize(points);
  for (std::size_t p = 0; p < points; ++p) {
    const std::size_t a = p >= half ? p - half : 0;
    const std::size_t b = std::min(points, p + half + 1);
    double acc = 0.0;
    for (std::size_t q = a; q < b; ++q) acc += y[q];
    out.y[p] = acc / static_cast<double>(b - a);
  }
  return out;
}

void write_svg(const std::filesystem::path& path, const std::string& title, const std::vector<Series>& series) {
  constexpr double W = 720.0;
  constexpr double H = 440.0;
  constexpr double L = 70.0;
  constexpr double R = 150.0;
  constexpr double T = 40.0;
  constexpr double B = 50.0;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  bool first = true;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
     << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = xmin + (xmax - xmin) * t / 4.0;
    const double fy = ymin + (ymax - ymin) * t / 4.0;
    os << "<text x=\"" << px(fx) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << io::decimal(std::round(fx))
       << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">"
       << io::decimal(std::round(fy * 100.0) / 100.0) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">steps</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const char* color = colors[k % (sizeof colors / sizeof *colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << px(s.x[i]) << ',' << py(s.y[i]);
    os << "\"/>\n";
    const double ly = T + 16.0 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 36 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << W - R + 42 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << os.str();
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
}

}  // namespace ccv::harness
