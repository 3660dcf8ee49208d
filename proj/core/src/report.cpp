#include "ght/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ght {
namespace report {

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError(strprintf("cannot create directory '%s': %s", path.c_str(), ec.message().c_str()));
}

void write_text_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(strprintf("cannot write '%s'", tmp.c_str()));
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError(strprintf("short write to '%s'", tmp.c_str()));
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError(strprintf("cannot move '%s' into place", tmp.c_str()));
}

std::string metrics_csv_header() {
  return "step,loss_task,loss_group,homogeneity,diversity,sc,di,ppl,acc";
}

std::string metrics_csv_line(const MetricsRow& r) {
  return strprintf("%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                   static_cast<long long>(r.step), r.loss_task, r.loss_group, r.homogeneity,
                   r.diversity, r.sc, r.di, r.ppl, r.acc);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(strprintf("cannot open metrics log '%s'", path.c_str()));
  std::vector<MetricsRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("step,", 0) == 0) continue;  // header
    }
    MetricsRow r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &step, &r.loss_task,
                    &r.loss_group, &r.homogeneity, &r.diversity, &r.sc, &r.di, &r.ppl,
                    &r.acc) != 9)
      throw IoError(strprintf("malformed metrics row: '%s'", line.c_str()));
    r.step = step;
    rows.push_back(r);
  }
  return rows;
}

std::string render_metrics_summary(const std::string& csv_path) {
  auto rows = read_metrics_csv(csv_path);
  if (rows.empty()) return "metrics log is empty\n";
  const MetricsRow& first = rows.front();
  const MetricsRow& last = rows.back();
  MetricsRow best_acc = rows.front();
  for (const auto& r : rows)
    if (r.acc > best_acc.acc) best_acc = r;

  std::ostringstream os;
  os << "rows = " << rows.size() << "\n";
  os << "steps = " << first.step << " .. " << last.step << "\n\n";
  os << strprintf("%-14s %12s %12s %12s\n", "column", "first", "last", "best_acc_row");
  auto line = [&](const char* name, double a, double b, double c) {
    os << strprintf("%-14s %12.6g %12.6g %12.6g\n", name, a, b, c);
  };
  line("loss_task", first.loss_task, last.loss_task, best_acc.loss_task);
  line("loss_group", first.loss_group, last.loss_group, best_acc.loss_group);
  line("homogeneity", first.homogeneity, last.homogeneity, best_acc.homogeneity);
  line("diversity", first.diversity, last.diversity, best_acc.diversity);
  line("sc", first.sc, last.sc, best_acc.sc);
  line("di", first.di, last.di, best_acc.di);
  line("ppl", first.ppl, last.ppl, best_acc.ppl);
  line("acc", first.acc, last.acc, best_acc.acc);
  os << "\nhomogeneity/diversity series written next to the log by `report`.\n";
  return os.str();
}

void write_series_files(const std::string& csv_path, const std::string& out_dir) {
  auto rows = read_metrics_csv(csv_path);
  ensure_dir(out_dir);
  std::string homog = "step,homogeneity\n";
  std::string div = "step,diversity\n";
  for (const auto& r : rows) {
    homog += strprintf("%lld,%.9g\n", static_cast<long long>(r.step), r.homogeneity);
    div += strprintf("%lld,%.9g\n", static_cast<long long>(r.step), r.diversity);
  }
  write_text_atomic(out_dir + "/homogeneity_series.csv", homog);
  write_text_atomic(out_dir + "/diversity_series.csv", div);
}

// Dump layout: "GHTFMD1\n" then one line per record:
//   layer head kind dim v0 v1 ... v{dim-1}
void write_fm_dump(const std::string& path, const std::vector<FmDumpRecord>& records) {
  std::ostringstream os;
  os << "GHTFMD1\n";
  os.precision(17);
  for (const auto& r : records) {
    os << r.layer << " " << r.head << " " << r.kind << " " << r.values.size();
    for (double v : r.values) os << " " << v;
    os << "\n";
  }
  write_text_atomic(path, os.str());
}

std::vector<FmDumpRecord> read_fm_dump(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(strprintf("cannot open fm dump '%s'", path.c_str()));
  std::string magic;
  std::getline(f, magic);
  if (magic != "GHTFMD1") throw IoError(strprintf("'%s' is not an fm dump", path.c_str()));
  std::vector<FmDumpRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    FmDumpRecord r;
    size_t dim = 0;
    if (!(is >> r.layer >> r.head >> r.kind >> dim))
      throw IoError(strprintf("malformed fm dump row: '%s'", line.c_str()));
    r.values.resize(dim);
    for (size_t i = 0; i < dim; ++i)
      if (!(is >> r.values[i])) throw IoError("malformed fm dump row: short vector");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace report
}  // namespace ght
