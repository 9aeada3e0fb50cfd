// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <string_view>
#include <tuple>

#include "qebench/errors.hpp"
#include "qebench/experiment.hpp"
#include "qebench/metrics.hpp"

namespace qebench {

namespace {

constexpr const char* kCsvHeader =
    "variant,knobs,seed,digest,id_acc,id_qtype_acc,ood_acc,ood_qtype_acc,"
    "pct_acc,delta_gap,wall_seconds";

std::string fmt_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericError("cannot format double");
  return std::string(buf, end);
}

double parse_field_double(std::string_view f, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
    throw DataError("csv line " + std::to_string(line_no) +
                    ": malformed numeric field");
  }
  return v;
}

std::int64_t parse_field_int(std::string_view f, std::size_t line_no) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (f.empty() || ec != std::errc() || ptr != f.data() + f.size()) {
    throw DataError("csv line " + std::to_string(line_no) +
                    ": malformed integer field");
  }
  return v;
}

void require_plain(const std::string& s, const char* what) {
  if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos) {
    throw DataError(std::string(what) + " may not contain commas or newlines");
  }
}

auto sort_key(const ReportLine& l) {
  return std::tie(l.variant, l.knobs, l.seed);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<ReportLine> aggregate_lines(const std::vector<ReportLine>& lines) {
  std::vector<ReportLine> out;
  std::size_t i = 0;
  while (i < lines.size()) {
    std::size_t j = i;
    while (j < lines.size() && lines[j].variant == lines[i].variant &&
           lines[j].knobs == lines[i].knobs &&
           lines[j].digest == lines[i].digest) {
      ++j;
    }
    std::vector<double> id, idq, ood, oodq, pct, gap, wall;
    for (std::size_t k = i; k < j; ++k) {
      id.push_back(lines[k].id_acc);
      idq.push_back(lines[k].id_qtype_acc);
      ood.push_back(lines[k].ood_acc);
      oodq.push_back(lines[k].ood_qtype_acc);
      pct.push_back(lines[k].pct_acc);
      gap.push_back(lines[k].delta_gap);
      wall.push_back(lines[k].wall_seconds);
    }
    ReportLine m = lines[i];
    m.seed = -1;  // aggregate marker
    m.id_acc = median(std::move(id));
    m.id_qtype_acc = median(std::move(idq));
    m.ood_acc = median(std::move(ood));
    m.ood_qtype_acc = median(std::move(oodq));
    m.pct_acc = median(std::move(pct));
    m.delta_gap = median(std::move(gap));
    m.wall_seconds = median(std::move(wall));
    out.push_back(std::move(m));
    i = j;
  }
  return out;
}

std::string emit_csv(const std::vector<ReportLine>& lines) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const ReportLine& l : lines) {
    require_plain(l.variant, "variant");
    require_plain(l.knobs, "knobs");
    require_plain(l.digest, "digest");
    out += l.variant;
    out += ',';
    out += l.knobs;
    out += ',';
    out += std::to_string(l.seed);
    out += ',';
    out += l.digest;
    out += ',';
    out += fmt_double(l.id_acc);
    out += ',';
    out += fmt_double(l.id_qtype_acc);
    out += ',';
    out += fmt_double(l.ood_acc);
    out += ',';
    out += fmt_double(l.ood_qtype_acc);
    out += ',';
    out += fmt_double(l.pct_acc);
    out += ',';
    out += fmt_double(l.delta_gap);
    out += ',';
    out += fmt_double(l.wall_seconds);
    out += '\n';
  }
  return out;
}

std::string emit_table(const std::vector<ReportLine>& lines) {
  std::vector<std::array<std::string, 9>> cells;
  cells.push_back({"variant", "knobs", "seed", "id-acc", "id-qtype", "ood-acc",
                   "ood-qtype", "%acc", "dgap"});
  char buf[64];
  for (const ReportLine& l : lines) {
    std::array<std::string, 9> row;
    row[0] = l.variant;
    row[1] = l.knobs;
    row[2] = l.seed < 0 ? "med" : std::to_string(l.seed);
    auto f2 = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.2f", v);
      return std::string(buf);
    };
    row[3] = f2(l.id_acc);
    row[4] = f2(l.id_qtype_acc);
    row[5] = f2(l.ood_acc);
    row[6] = f2(l.ood_qtype_acc);
    // Presentation truncates the prior-contribution percentage.
    row[7] = f2(two_decimal_floor(l.pct_acc));
    row[8] = f2(l.delta_gap);
    cells.push_back(std::move(row));
  }
  std::array<std::size_t, 9> width{};
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      if (c) out += "  ";
      out += cells[r][c];
      out.append(width[c] - cells[r][c].size(), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) {
        total += width[c] + (c ? 2 : 0);
      }
      out.append(total, '-');
      out += '\n';
    }
  }
  return out;
}

}  // namespace

ReportLine to_line(const ReportRow& row) {
  ReportLine l;
  const std::size_t slash = row.label.find('/');
  l.variant = row.label.substr(0, slash);
  l.knobs = slash == std::string::npos ? "-" : row.label.substr(slash + 1);
  l.seed = static_cast<std::int64_t>(row.seed);
  l.digest = row.digest;
  l.id_acc = row.id_full.overall_acc;
  l.id_qtype_acc = row.id_probe.overall_acc;
  l.ood_acc = row.ood_full.overall_acc;
  l.ood_qtype_acc = row.ood_probe.overall_acc;
  l.pct_acc = row.ood_full.pct_acc.value_or(0.0);
  l.delta_gap = row.ood_full.delta_gap.value_or(0.0);
  l.wall_seconds = row.wall_seconds;
  return l;
}

std::string emit_report_lines(std::vector<ReportLine> lines, ReportFormat fmt,
                              bool aggregate) {
  if (lines.empty()) throw DomainError("no rows to report");
  std::sort(lines.begin(), lines.end(),
            [](const ReportLine& a, const ReportLine& b) {
              return sort_key(a) < sort_key(b);
            });
  if (aggregate) lines = aggregate_lines(lines);
  switch (fmt) {
    case ReportFormat::csv: return emit_csv(lines);
    case ReportFormat::table: return emit_table(lines);
  }
  throw DomainError("unknown report format");
}

std::string emit_report(const std::vector<ReportRow>& rows, ReportFormat fmt,
                        bool aggregate) {
  std::vector<ReportLine> lines;
  lines.reserve(rows.size());
  for (const ReportRow& r : rows) lines.push_back(to_line(r));
  return emit_report_lines(std::move(lines), fmt, aggregate);
}

std::vector<ReportLine> parse_report_csv(const std::string& text) {
  std::vector<std::string_view> lines;
  std::string_view rest = text;
  while (!rest.empty()) {
    const std::size_t nl = rest.find('\n');
    if (nl == std::string_view::npos) {
      throw DataError("csv: missing trailing newline");
    }
    lines.push_back(rest.substr(0, nl));
    rest = rest.substr(nl + 1);
  }
  if (lines.empty() || lines.front() != kCsvHeader) {
    throw DataError("csv: unrecognized header");
  }
  std::vector<ReportLine> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string_view> fields;
    std::string_view line = lines[i];
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find(',', start);
      if (pos == std::string_view::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (fields.size() != 11) {
      throw DataError("csv line " + std::to_string(i + 1) +
                      ": expected 11 fields");
    }
    ReportLine l;
    l.variant = std::string(fields[0]);
    l.knobs = std::string(fields[1]);
    l.seed = parse_field_int(fields[2], i + 1);
    l.digest = std::string(fields[3]);
    l.id_acc = parse_field_double(fields[4], i + 1);
    l.id_qtype_acc = parse_field_double(fields[5], i + 1);
    l.ood_acc = parse_field_double(fields[6], i + 1);
    l.ood_qtype_acc = parse_field_double(fields[7], i + 1);
    l.pct_acc = parse_field_double(fields[8], i + 1);
    l.delta_gap = parse_field_double(fields[9], i + 1);
    l.wall_seconds = parse_field_double(fields[10], i + 1);
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace qebench
