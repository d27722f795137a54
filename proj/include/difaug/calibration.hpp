#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace difaug {

enum class Label { kReal, kFake };

// Raw discriminator output for one input plus that input's true class.
struct PredictionRecord {
  double logit = 0.0;
  Label label = Label::kReal;
};

struct Prediction {
  double confidence = 0.5;  // max(sigma, 1 - sigma), in [0.5, 1]
  Label predicted = Label::kReal;
};

// Real iff sigma(logit) >= 0.5, so logit 0 predicts Real.
Prediction confidence_and_label(const PredictionRecord& record);

struct BinStat {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  // Bin midpoint when the bin is empty.
  double mean_confidence = 0.0;
  // 0 when the bin is empty.
  double accuracy = 0.0;

  double gap() const;
};

struct CalibrationReport {
  std::size_t num_bins = 0;
  std::vector<BinStat> bins;
  double ece = 0.0;
  double overall_accuracy = 0.0;
  std::size_t total_samples = 0;

  // Count-weighted mean |accuracy - mean_confidence| from the published bins.
  double ece_from_bins() const;
};

inline constexpr std::size_t kDefaultCalibrationBins = 15;

// Edge m of M equal bins over [0.5, 1]: 0.5 + 0.5 * m / M.
double bin_edge(std::size_t m, std::size_t num_bins);

// Bin index of a confidence in [0.5, 1]: M equal bins, the first closed on
// both ends, the rest (lo, hi].
std::size_t confidence_bin(double confidence, std::size_t num_bins);

/// Binned expected calibration error
///   ECE = sum_m |B_m| / n * |acc(B_m) - conf(B_m)|
/// over num_bins equal-width bins of confidence on [0.5, 1].
CalibrationReport compute_ece(std::span<const PredictionRecord> records, std::size_t num_bins);

/// Reference ECE: a direct double loop over bins x records testing interval
/// membership. Shares no code with compute_ece.
double brute_force_ece(std::span<const PredictionRecord> records, std::size_t num_bins);

struct ReliabilityFiles {
  std::filesystem::path csv;
  std::filesystem::path svg;
};

/// Writes <stem>.csv (bin_lo,bin_hi,count,mean_confidence,accuracy,gap) and
/// <stem>.svg (reliability bars against the diagonal plus a confidence
/// histogram). `stem` is a path without extension.
ReliabilityFiles reliability_export(const CalibrationReport& report,
                                   const std::filesystem::path& stem,
                                   const std::string& title = "");

// "logit,label" CSV with label real|fake.
void write_records_csv(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_records_csv(const std::filesystem::path& path);

}  // namespace difaug
