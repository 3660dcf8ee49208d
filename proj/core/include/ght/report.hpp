#pragma once

#include <string>
#include <vector>

#include "ght/common.hpp"

namespace ght {
namespace report {

void write_text_atomic(const std::string& path, const std::string& content);
void ensure_dir(const std::string& path);

// One metrics-log row; columns are fixed:
// step,loss_task,loss_group,homogeneity,diversity,sc,di,ppl,acc
struct MetricsRow {
  int64_t step = 0;
  double loss_task = 0.0;
  double loss_group = 0.0;
  double homogeneity = 0.0;
  double diversity = 0.0;
  double sc = 0.0;
  double di = 0.0;
  double ppl = 0.0;
  double acc = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// Summary tables plus the homogeneity/diversity time series, rendered from a
// finished run's metrics log.
std::string render_metrics_summary(const std::string& csv_path);
void write_series_files(const std::string& csv_path, const std::string& out_dir);

// Pooled feature-map dump: one record per (layer, head, kind).
struct FmDumpRecord {
  int32_t layer = 0;
  int32_t head = 0;
  char kind = 'v';  // v | a | o
  std::vector<double> values;
};
void write_fm_dump(const std::string& path, const std::vector<FmDumpRecord>& records);
std::vector<FmDumpRecord> read_fm_dump(const std::string& path);

}  // namespace report
}  // namespace ght
