#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/train.hpp"

namespace rbcnet {

inline constexpr const char* kTrainingLogHeader =
    "epoch,train_loss,train_acc,val_loss,val_acc";

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_training_log(const std::string& path,
                               const std::vector<HistoryRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw HarnessError("cannot write training log: " + path);
  os << kTrainingLogHeader << "\n";
  for (const auto& r : rows)
    os << r.epoch << "," << format_double(r.train_loss) << ","
       << format_double(r.train_acc) << "," << format_double(r.val_loss) << ","
       << format_double(r.val_acc) << "\n";
}

inline std::vector<HistoryRow> parse_training_log(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw HarnessError("cannot read training log: " + path);
  std::string line;
  if (!std::getline(is, line) || line != kTrainingLogHeader)
    throw FormatError("bad training log header");
  std::vector<HistoryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    HistoryRow r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    if (!(ls >> r.epoch >> r.train_loss >> r.train_acc >> r.val_loss >>
          r.val_acc))
      throw FormatError("bad training log row: " + line);
    rows.push_back(r);
  }
  return rows;
}

namespace detail {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> values;
};

// Minimal line chart; one polyline per series, epoch on x.
inline void write_svg_chart(const std::string& path, const std::string& title,
                            const std::vector<int>& epochs,
                            const std::vector<Series>& series) {
  const double w = 640, h = 420, ml = 60, mr = 20, mt = 40, mb = 50;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series)
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) {  // flat or single-point series still renders
    lo -= 0.5;
    hi += 0.5;
  }
  const int e0 = epochs.front(), e1 = epochs.back();
  auto sx = [&](int e) {
    if (e1 == e0) return ml + (w - ml - mr) / 2;
    return ml + (w - ml - mr) * (e - e0) / static_cast<double>(e1 - e0);
  };
  auto sy = [&](double v) { return h - mb - (h - mt - mb) * (v - lo) / (hi - lo); };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw HarnessError("cannot write chart: " + path);
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
     << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">"
     << title << "</text>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
     << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << ml << "\" y=\"" << h - mb + 20
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"12\">"
     << e0 << "</text>\n";
  os << "<text x=\"" << w - mr << "\" y=\"" << h - mb + 20
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"12\">"
     << e1 << "</text>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"12\">epoch</text>\n";
  os << "<text x=\"" << ml - 8 << "\" y=\"" << sy(lo)
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
     << lo << "</text>\n";
  os << "<text x=\"" << ml - 8 << "\" y=\"" << sy(hi) + 4
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
     << hi << "</text>\n";
  double legend_y = mt;
  for (const auto& s : series) {
    if (s.values.size() == 1) {
      os << "<circle cx=\"" << sx(epochs[0]) << "\" cy=\"" << sy(s.values[0])
         << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    } else {
      os << "<polyline fill=\"none\" stroke=\"" << s.color
         << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < s.values.size(); ++i)
        os << sx(epochs[i]) << "," << sy(s.values[i]) << " ";
      os << "\"/>\n";
    }
    os << "<text x=\"" << w - mr - 4 << "\" y=\"" << legend_y
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" "
          "fill=\""
       << s.color << "\">" << s.label << "</text>\n";
    legend_y += 16;
  }
  os << "</svg>\n";
}

}  // namespace detail

// Writes accuracy.svg, loss.svg and training_log.csv into `dir`. The charts
// carry train and validation series over epochs.
inline void emit_training_curves(const std::vector<HistoryRow>& rows,
                                 const std::string& dir) {
  if (rows.empty()) throw HarnessError("empty training log");
  std::filesystem::create_directories(dir);
  std::vector<int> epochs;
  detail::Series tacc{"train", "#1f77b4", {}}, vacc{"validation", "#d62728", {}};
  detail::Series tloss{"train", "#1f77b4", {}}, vloss{"validation", "#d62728", {}};
  for (const auto& r : rows) {
    epochs.push_back(r.epoch);
    tacc.values.push_back(r.train_acc);
    vacc.values.push_back(r.val_acc);
    tloss.values.push_back(r.train_loss);
    vloss.values.push_back(r.val_loss);
  }
  const auto base = std::filesystem::path(dir);
  detail::write_svg_chart((base / "accuracy.svg").string(), "accuracy",
                          epochs, {tacc, vacc});
  detail::write_svg_chart((base / "loss.svg").string(), "loss", epochs,
                          {tloss, vloss});
  write_training_log((base / "training_log.csv").string(), rows);
}

}  // namespace rbcnet
