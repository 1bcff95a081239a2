#include "ivhazard/panel.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace ivhazard {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& field, const std::string& column,
                    std::size_t line_no) {
  const std::string t = trim(field);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size())
    throw DataError("column '" + column + "', line " +
                    std::to_string(line_no) + ": cannot parse '" + t +
                    "' as a number");
  return v;
}

long parse_period(const std::string& field, const std::string& column,
                  std::size_t line_no) {
  double v = parse_double(field, column, line_no);
  double r = std::round(v);
  if (!std::isfinite(v) || std::abs(v - r) > 0.0 || r < 1.0 || r > 1e9)
    throw DataError("column '" + column + "', line " +
                    std::to_string(line_no) + ": period '" + trim(field) +
                    "' must be a positive integer");
  return static_cast<long>(r);
}

void sort_records(PanelDataset& d) {
  std::stable_sort(d.records.begin(), d.records.end(),
                   [](const PanelRecord& a, const PanelRecord& b) {
                     if (a.entity != b.entity) return a.entity < b.entity;
                     return a.time < b.time;
                   });
}

}  // namespace

PanelDataset truncate_after_failure(PanelDataset d) {
  sort_records(d);
  std::vector<PanelRecord> kept;
  kept.reserve(d.records.size());
  std::string cur_entity;
  bool have_entity = false;
  bool failed = false;
  for (auto& r : d.records) {
    if (!have_entity || r.entity != cur_entity) {
      cur_entity = r.entity;  // copy: r is moved from below
      have_entity = true;
      failed = false;
    }
    if (failed) continue;
    if (r.fail == 1) failed = true;
    kept.push_back(std::move(r));
  }
  d.records = std::move(kept);
  return d;
}

void validate_panel(const PanelDataset& d) {
  if (d.records.empty()) throw DataError("panel contains no records");
  auto covariate_check = [](const std::vector<double>& vals,
                            const std::vector<std::string>& names,
                            const PanelRecord& r, const char* role) {
    if (vals.size() != names.size())
      throw DataError(std::string(role) + " width mismatch for entity '" +
                      r.entity + "'");
    for (std::size_t j = 0; j < vals.size(); ++j)
      if (!std::isfinite(vals[j]))
        throw DataError("column '" + names[j] + "': non-finite value for "
                        "entity '" + r.entity + "', period " +
                        std::to_string(r.time));
  };
  const std::string* cur = nullptr;
  long prev_time = 0;
  bool failed = false;
  std::string cluster_value;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const PanelRecord& r = d.records[i];
    if (r.fail != 0 && r.fail != 1)
      throw DataError("entity '" + r.entity + "', period " +
                      std::to_string(r.time) +
                      ": fail must be 0 or 1, got " + std::to_string(r.fail));
    covariate_check(r.endog, d.endog_names, r, "endogenous");
    covariate_check(r.exog, d.exog_names, r, "exogenous");
    covariate_check(r.instruments, d.instrument_names, r, "instrument");
    bool new_entity = (cur == nullptr || r.entity != *cur);
    if (!new_entity && r.time <= prev_time) {
      if (r.time == prev_time)
        throw DataError("entity '" + r.entity + "': duplicate record for "
                        "period " + std::to_string(r.time));
      throw DataError("entity '" + r.entity + "': records are not sorted by "
                      "period");
    }
    if (new_entity) {
      cur = &r.entity;
      failed = false;
      cluster_value = r.cluster;
      if (r.time != 1)
        throw DataError("entity '" + r.entity + "': first observed period is " +
                        std::to_string(r.time) +
                        "; risk histories must start at period 1 (delayed "
                        "entry is not supported)");
    } else {
      if (r.time != prev_time + 1)
        throw DataError("entity '" + r.entity + "': gap in periods between " +
                        std::to_string(prev_time) + " and " +
                        std::to_string(r.time));
      if (r.cluster != cluster_value)
        throw DataError("entity '" + r.entity + "': cluster value changes "
                        "within the entity ('" + cluster_value + "' vs '" +
                        r.cluster + "')");
      if (failed)
        throw DataError("entity '" + r.entity + "': records after failure "
                        "(failed at period " + std::to_string(prev_time) +
                        ", saw period " + std::to_string(r.time) + ")");
    }
    if (r.fail == 1) failed = true;
    prev_time = r.time;
  }
}

PanelDataset load_panel(std::istream& src, const CsvSchema& schema,
                        TruncationPolicy policy) {
  if (schema.entity.empty() || schema.time.empty() || schema.fail.empty())
    throw UsageError("schema must name entity, time, and fail columns");
  std::string line;
  if (!std::getline(src, line)) throw DataError("input is empty");
  if (line.size() >= 3 && line[0] == '\xEF' && line[1] == '\xBB' &&
      line[2] == '\xBF')
    line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t j = 0; j < header.size(); ++j) col_of[trim(header[j])] = j;
  auto need = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end())
      throw DataError("required column '" + name + "' is missing from the "
                      "header");
    return it->second;
  };
  const std::size_t c_entity = need(schema.entity);
  const std::size_t c_time = need(schema.time);
  const std::size_t c_fail = need(schema.fail);
  std::vector<std::size_t> c_endog, c_exog, c_inst;
  for (const auto& n : schema.endog) c_endog.push_back(need(n));
  for (const auto& n : schema.exog) c_exog.push_back(need(n));
  for (const auto& n : schema.instruments) c_inst.push_back(need(n));
  std::size_t c_cluster = 0;
  if (!schema.cluster.empty()) c_cluster = need(schema.cluster);

  PanelDataset d;
  d.endog_names = schema.endog;
  d.exog_names = schema.exog;
  d.instrument_names = schema.instruments;
  d.cluster_name = schema.cluster;

  std::size_t line_no = 1;
  while (std::getline(src, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(f.size()));
    PanelRecord r;
    r.entity = trim(f[c_entity]);
    if (r.entity.empty())
      throw DataError("line " + std::to_string(line_no) +
                      ": empty entity id");
    r.time = parse_period(f[c_time], schema.time, line_no);
    double fail = parse_double(f[c_fail], schema.fail, line_no);
    if (fail != 0.0 && fail != 1.0)
      throw DataError("column '" + schema.fail + "', line " +
                      std::to_string(line_no) + ": fail must be 0 or 1");
    r.fail = static_cast<int>(fail);
    for (std::size_t j = 0; j < c_endog.size(); ++j)
      r.endog.push_back(parse_double(f[c_endog[j]], schema.endog[j], line_no));
    for (std::size_t j = 0; j < c_exog.size(); ++j)
      r.exog.push_back(parse_double(f[c_exog[j]], schema.exog[j], line_no));
    for (std::size_t j = 0; j < c_inst.size(); ++j)
      r.instruments.push_back(
          parse_double(f[c_inst[j]], schema.instruments[j], line_no));
    if (!schema.cluster.empty()) r.cluster = trim(f[c_cluster]);
    d.records.push_back(std::move(r));
  }
  if (policy == TruncationPolicy::truncate) {
    d = truncate_after_failure(std::move(d));
  } else {
    sort_records(d);
  }
  validate_panel(d);
  return d;
}

PanelDataset load_panel_file(const std::string& path, const CsvSchema& schema,
                             TruncationPolicy policy) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return load_panel(in, schema, policy);
}

Matrix EstimationFrame::time_dummies() const {
  Matrix dummies(rows(), periods.size());
  for (std::size_t i = 0; i < rows(); ++i) dummies(i, row_period[i]) = 1.0;
  return dummies;
}

EstimationFrame build_frame(const PanelDataset& d) {
  validate_panel(d);
  EstimationFrame f;
  const std::size_t n = d.records.size();
  f.endog_names = d.endog_names;
  f.exog_names = d.exog_names;
  f.instrument_names = d.instrument_names;
  f.y.resize(n);
  f.x_endog = Matrix(n, d.endog_names.size());
  f.exog = Matrix(n, d.exog_names.size());
  f.instruments = Matrix(n, d.instrument_names.size());
  f.row_entity.resize(n);
  f.row_period.resize(n);

  std::map<long, std::size_t> period_index;
  for (const auto& r : d.records) period_index.emplace(r.time, 0);
  for (auto it = period_index.begin(); it != period_index.end(); ++it) {
    it->second = f.periods.size();
    f.periods.push_back(static_cast<int>(it->first));
  }

  for (std::size_t i = 0; i < n; ++i) {
    const PanelRecord& r = d.records[i];
    f.y[i] = r.fail;
    for (std::size_t j = 0; j < r.endog.size(); ++j)
      f.x_endog(i, j) = r.endog[j];
    for (std::size_t j = 0; j < r.exog.size(); ++j) f.exog(i, j) = r.exog[j];
    for (std::size_t j = 0; j < r.instruments.size(); ++j)
      f.instruments(i, j) = r.instruments[j];
    f.row_period[i] = period_index.at(r.time);
    bool new_entity =
        (i == 0 || r.entity != d.records[i - 1].entity);
    if (new_entity) {
      f.entity_begin.push_back(i);
      f.entity_ids.push_back(r.entity);
      f.entity_cluster.push_back(r.cluster);
      f.delta.push_back(0);
      f.final_period.push_back(0);
    }
    std::size_t e = f.entity_ids.size() - 1;
    f.row_entity[i] = e;
    f.delta[e] = r.fail;
    f.final_period[e] = static_cast<int>(r.time);
  }
  f.entity_begin.push_back(n);
  return f;
}

}  // namespace ivhazard
