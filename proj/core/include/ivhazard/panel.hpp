#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "ivhazard/errors.hpp"
#include "ivhazard/linalg.hpp"

namespace ivhazard {

// Column roles in the input CSV.  `cluster` is optional; when set it must be
// constant within each entity and is used for clustered variance estimation.
struct CsvSchema {
  std::string entity;
  std::string time;
  std::string fail;
  std::vector<std::string> endog;
  std::vector<std::string> exog;
  std::vector<std::string> instruments;
  std::string cluster;
};

struct PanelRecord {
  std::string entity;
  long time = 0;
  int fail = 0;
  std::vector<double> endog;
  std::vector<double> exog;
  std::vector<double> instruments;
  std::string cluster;
};

// One row per entity-period at risk, sorted by (entity, time).  Valid
// datasets satisfy: periods within an entity run 1..s_i without gaps, and
// fail == 1 occurs at most once, only at the entity's last observed period.
struct PanelDataset {
  std::vector<PanelRecord> records;
  std::vector<std::string> endog_names;
  std::vector<std::string> exog_names;
  std::vector<std::string> instrument_names;
  std::string cluster_name;

  std::size_t n_rows() const noexcept { return records.size(); }
};

enum class TruncationPolicy {
  reject,    // rows dated after an entity's failure are a validation error
  truncate,  // such rows are silently dropped before validation
};

// Drops every row dated after an entity's first failure.  Idempotent.
PanelDataset truncate_after_failure(PanelDataset d);

// Sorts, optionally truncates, and validates.  Validation failures raise
// DataError naming the offending column, entity, or period.
PanelDataset load_panel(std::istream& src, const CsvSchema& schema,
                        TruncationPolicy policy = TruncationPolicy::reject);
PanelDataset load_panel_file(const std::string& path, const CsvSchema& schema,
                             TruncationPolicy policy =
                                 TruncationPolicy::reject);

// Re-checks the PanelDataset invariants (used by load_panel; callers that
// build datasets programmatically can call it directly).
void validate_panel(const PanelDataset& d);

// Person-period design, one row per entity-period.  Rows are grouped by
// entity: entity i owns rows [entity_begin[i], entity_begin[i+1]).
struct EstimationFrame {
  std::vector<int> y;                    // failure indicator per row
  Matrix x_endog;                        // raw endogenous regressors
  Matrix exog;                           // non-dummy exogenous regressors
  Matrix instruments;                    // excluded instruments
  std::vector<std::size_t> row_entity;   // row -> entity index
  std::vector<std::size_t> row_period;   // row -> index into `periods`

  std::vector<std::string> entity_ids;
  std::vector<std::size_t> entity_begin;  // size n_entities() + 1
  std::vector<int> delta;                 // 1 if entity failed
  std::vector<int> final_period;          // s_i, the last observed period
  std::vector<std::string> entity_cluster;

  std::vector<int> periods;  // sorted distinct periods across the panel
  std::vector<std::string> endog_names;
  std::vector<std::string> exog_names;
  std::vector<std::string> instrument_names;

  std::size_t rows() const noexcept { return y.size(); }
  std::size_t n_entities() const noexcept { return entity_ids.size(); }
  std::size_t n_periods() const noexcept { return periods.size(); }

  // Indicator expansion of row_period, one column per observed period.
  Matrix time_dummies() const;
};

EstimationFrame build_frame(const PanelDataset& d);

}  // namespace ivhazard
