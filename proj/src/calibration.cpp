#include "difaug/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "difaug/error.hpp"

namespace difaug {
namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void check_inputs(std::span<const PredictionRecord> records, std::size_t num_bins) {
  if (records.empty()) throw ConfigError("calibration needs at least one prediction record");
  if (num_bins == 0) throw ConfigError("calibration needs at least one bin");
}

}  // namespace

// max(sigma(x), 1 - sigma(x)) == sigma(|x|); evaluating it that way keeps the
// confidence bit-identical under logit negation.
Prediction confidence_and_label(const PredictionRecord& record) {
  const double conf = sigmoid(std::abs(record.logit));
  return {conf, record.logit >= 0.0 ? Label::kReal : Label::kFake};
}

double BinStat::gap() const { return count == 0 ? 0.0 : std::abs(accuracy - mean_confidence); }

double CalibrationReport::ece_from_bins() const {
  double ece_sum = 0.0;
  for (const BinStat& b : bins) {
    if (b.count == 0) continue;
    ece_sum += static_cast<double>(b.count) / static_cast<double>(total_samples) *
               std::abs(b.accuracy - b.mean_confidence);
  }
  return ece_sum;
}

double bin_edge(std::size_t m, std::size_t num_bins) {
  return 0.5 + 0.5 * static_cast<double>(m) / static_cast<double>(num_bins);
}

std::size_t confidence_bin(double confidence, std::size_t num_bins) {
  const double scaled = (confidence - 0.5) * 2.0 * static_cast<double>(num_bins);
  const double guess = std::ceil(scaled) - 1.0;
  std::size_t idx = guess <= 0.0 ? 0 : std::min(static_cast<std::size_t>(guess), num_bins - 1);
  // The guess can be one off within an ulp of an edge; settle it against the
  // edges themselves.
  while (idx > 0 && confidence <= bin_edge(idx, num_bins)) --idx;
  while (idx + 1 < num_bins && confidence > bin_edge(idx + 1, num_bins)) ++idx;
  return idx;
}

CalibrationReport compute_ece(std::span<const PredictionRecord> records, std::size_t num_bins) {
  check_inputs(records, num_bins);
  std::vector<double> conf_sum(num_bins, 0.0);
  std::vector<std::size_t> correct(num_bins, 0), count(num_bins, 0);
  std::size_t total_correct = 0;
  for (const PredictionRecord& r : records) {
    if (!std::isfinite(r.logit)) throw NumericError("non-finite logit in prediction records");
    const Prediction p = confidence_and_label(r);
    const std::size_t b = confidence_bin(p.confidence, num_bins);
    conf_sum[b] += p.confidence;
    ++count[b];
    if (p.predicted == r.label) {
      ++correct[b];
      ++total_correct;
    }
  }

  CalibrationReport report;
  report.num_bins = num_bins;
  report.total_samples = records.size();
  report.overall_accuracy =
      static_cast<double>(total_correct) / static_cast<double>(records.size());
  for (std::size_t b = 0; b < num_bins; ++b) {
    BinStat s;
    s.lo = bin_edge(b, num_bins);
    s.hi = bin_edge(b + 1, num_bins);
    s.count = count[b];
    if (count[b] > 0) {
      s.mean_confidence = conf_sum[b] / static_cast<double>(count[b]);
      s.accuracy = static_cast<double>(correct[b]) / static_cast<double>(count[b]);
    } else {
      s.mean_confidence = 0.5 * (s.lo + s.hi);
    }
    report.bins.push_back(s);
  }
  report.ece = report.ece_from_bins();
  return report;
}

double brute_force_ece(std::span<const PredictionRecord> records, std::size_t num_bins) {
  check_inputs(records, num_bins);
  const double n = static_cast<double>(records.size());
  double ece = 0.0;
  for (std::size_t m = 0; m < num_bins; ++m) {
    const double lo = 0.5 + 0.5 * static_cast<double>(m) / static_cast<double>(num_bins);
    const double hi = 0.5 + 0.5 * static_cast<double>(m + 1) / static_cast<double>(num_bins);
    double members = 0.0, hits = 0.0, conf = 0.0;
    for (const PredictionRecord& r : records) {
      const double c = 1.0 / (1.0 + std::exp(-std::abs(r.logit)));
      const bool inside = m == 0 ? (c >= lo && c <= hi) : (c > lo && c <= hi);
      if (!inside) continue;
      members += 1.0;
      conf += c;
      const bool says_real = r.logit >= 0.0;
      if (says_real == (r.label == Label::kReal)) hits += 1.0;
    }
    if (members > 0.0) ece += members / n * std::abs(hits / members - conf / members);
  }
  return ece;
}

ReliabilityFiles reliability_export(const CalibrationReport& report,
                                   const std::filesystem::path& stem, const std::string& title) {
  ReliabilityFiles files{stem, stem};
  files.csv += ".csv";
  files.svg += ".svg";

  std::ofstream csv(files.csv, std::ios::trunc);
  if (!csv) throw IoError("cannot write reliability CSV '" + files.csv.string() + "'");
  csv << "bin_lo,bin_hi,count,mean_confidence,accuracy,gap\n";
  for (const BinStat& b : report.bins) {
    csv << fmt("%.6f", b.lo) << ',' << fmt("%.6f", b.hi) << ',' << b.count << ','
        << fmt("%.9f", b.mean_confidence) << ',' << fmt("%.9f", b.accuracy) << ','
        << fmt("%.9f", b.gap()) << '\n';
  }
  if (!csv) throw IoError("write failed for '" + files.csv.string() + "'");

  // Two stacked panels: confidence histogram on top, reliability diagram below.
  constexpr double kLeft = 60, kWidth = 360, kTop = 40, kHistH = 120, kGapH = 50, kRelH = 300;
  const double rel_top = kTop + kHistH + kGapH;
  const double bar_w = kWidth / static_cast<double>(report.num_bins);
  auto x_of = [&](double conf) { return kLeft + (conf - 0.5) / 0.5 * kWidth; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"460\" height=\"560\" "
         "font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kLeft << "\" y=\"22\" font-size=\"14\">"
      << (title.empty() ? "Discriminator calibration" : title) << " (ECE "
      << fmt("%.4f", report.ece) << ", acc " << fmt("%.4f", report.overall_accuracy)
      << ")</text>\n";

  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth << "\" height=\""
      << kHistH << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < report.bins.size(); ++i) {
    const double frac =
        static_cast<double>(report.bins[i].count) / static_cast<double>(report.total_samples);
    const double h = frac * kHistH;
    svg << "<rect x=\"" << fmt("%.3f", kLeft + bar_w * static_cast<double>(i)) << "\" y=\""
        << fmt("%.3f", kTop + kHistH - h) << "\" width=\"" << fmt("%.3f", bar_w) << "\" height=\""
        << fmt("%.3f", h) << "\" fill=\"#4c72b0\" stroke=\"white\"/>\n";
  }
  svg << "<text x=\"10\" y=\"" << kTop + kHistH / 2 << "\">% samples</text>\n";

  svg << "<rect x=\"" << kLeft << "\" y=\"" << rel_top << "\" width=\"" << kWidth
      << "\" height=\"" << kRelH << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < report.bins.size(); ++i) {
    const BinStat& b = report.bins[i];
    if (b.count == 0) continue;
    const double x = kLeft + bar_w * static_cast<double>(i);
    const double acc_h = b.accuracy * kRelH;
    const double conf_h = b.mean_confidence * kRelH;
    svg << "<rect x=\"" << fmt("%.3f", x) << "\" y=\"" << fmt("%.3f", rel_top + kRelH - acc_h)
        << "\" width=\"" << fmt("%.3f", bar_w) << "\" height=\"" << fmt("%.3f", acc_h)
        << "\" fill=\"#4c72b0\" stroke=\"white\"/>\n";
    const double top = std::min(acc_h, conf_h), bottom = std::max(acc_h, conf_h);
    svg << "<rect x=\"" << fmt("%.3f", x) << "\" y=\"" << fmt("%.3f", rel_top + kRelH - bottom)
        << "\" width=\"" << fmt("%.3f", bar_w) << "\" height=\"" << fmt("%.3f", bottom - top)
        << "\" fill=\"#dd8452\" fill-opacity=\"0.5\" stroke=\"#dd8452\"/>\n";
  }
  // Identity calibration: accuracy == confidence, drawn over [0.5, 1].
  svg << "<line x1=\"" << x_of(0.5) << "\" y1=\"" << fmt("%.3f", rel_top + kRelH * 0.5)
      << "\" x2=\"" << x_of(1.0) << "\" y2=\"" << rel_top
      << "\" stroke=\"gray\" stroke-dasharray=\"4,3\"/>\n";
  svg << "<text x=\"10\" y=\"" << rel_top + kRelH / 2 << "\">accuracy</text>\n";
  svg << "<text x=\"" << kLeft << "\" y=\"" << rel_top + kRelH + 18 << "\">0.5</text>\n";
  svg << "<text x=\"" << kLeft + kWidth - 10 << "\" y=\"" << rel_top + kRelH + 18
      << "\">1.0</text>\n";
  svg << "<text x=\"" << kLeft + kWidth / 2 - 30 << "\" y=\"" << rel_top + kRelH + 34
      << "\">confidence</text>\n";
  svg << "</svg>\n";

  std::ofstream out(files.svg, std::ios::trunc);
  if (!out) throw IoError("cannot write reliability SVG '" + files.svg.string() + "'");
  out << svg.str();
  if (!out) throw IoError("write failed for '" + files.svg.string() + "'");
  return files;
}

void write_records_csv(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write record log '" + path.string() + "'");
  os << "logit,label\n";
  for (const PredictionRecord& r : records) {
    os << fmt("%.17g", r.logit) << ',' << (r.label == Label::kReal ? "real" : "fake") << '\n';
  }
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<PredictionRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open record log '" + path.string() + "'");
  std::vector<PredictionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "logit,label") fail("expected header 'logit,label', got '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      fail("expected two comma-separated fields");
    }
    const std::string logit_text = line.substr(0, comma);
    const std::string label_text = line.substr(comma + 1);
    char* end = nullptr;
    const double logit = std::strtod(logit_text.c_str(), &end);
    if (logit_text.empty() || end != logit_text.c_str() + logit_text.size()) {
      fail("malformed logit '" + logit_text + "'");
    }
    if (!std::isfinite(logit)) fail("non-finite logit '" + logit_text + "'");
    PredictionRecord r;
    r.logit = logit;
    if (label_text == "real") {
      r.label = Label::kReal;
    } else if (label_text == "fake") {
      r.label = Label::kFake;
    } else {
      fail("label must be 'real' or 'fake', got '" + label_text + "'");
    }
    records.push_back(r);
  }
  if (line_no == 0) throw ParseError(path.string() + ":1: empty record log");
  return records;
}

}  // namespace difaug
