#include <doctest.h>

#include <ivhazard/panel.hpp>
#include <ivhazard/simulate.hpp>

#include "support.hpp"

using namespace ivhazard;
using test_support::basic_schema;
using test_support::panel_from_csv;

namespace {

const char* kTwoEntityCsv =
    "entity,time,fail,x1,w1,z1,z2\n"
    "a,1,0,0.1,1.0,0.5,0.2\n"
    "a,2,0,0.2,1.0,0.4,0.1\n"
    "a,3,1,0.3,1.0,0.3,0.0\n"
    "b,1,0,-0.1,2.0,0.2,0.3\n"
    "b,2,0,-0.2,2.0,0.1,0.4\n"
    "b,3,0,-0.3,2.0,0.0,0.5\n";

}  // namespace

TEST_CASE("minimal two-entity panel loads with delta (1,0)") {
  PanelDataset d = panel_from_csv(kTwoEntityCsv, basic_schema());
  CHECK(d.n_rows() == 6);
  EstimationFrame f = build_frame(d);
  CHECK(f.n_entities() == 2);
  REQUIRE(f.delta.size() == 2);
  CHECK(f.delta[0] == 1);
  CHECK(f.delta[1] == 0);
  CHECK(f.final_period[0] == 3);
  CHECK(f.final_period[1] == 3);
}

TEST_CASE("records after failure are rejected") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "a,1,0,0.1,1.0,0.5,0.2\n"
      "a,2,1,0.2,1.0,0.4,0.1\n"
      "a,3,0,0.3,1.0,0.3,0.0\n";
  try {
    panel_from_csv(csv, basic_schema());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("records after failure") !=
          std::string::npos);
  }
}

TEST_CASE("empty input is a loud error") {
  try {
    panel_from_csv("entity,time,fail,x1,w1,z1,z2\n", basic_schema());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("no records") != std::string::npos);
  }
}

TEST_CASE("truncate_after_failure drops later rows and is idempotent") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "a,1,0,0.1,1.0,0.5,0.2\n"
      "a,2,1,0.2,1.0,0.4,0.1\n"
      "a,3,0,0.3,1.0,0.3,0.0\n"
      "a,4,0,0.4,1.0,0.2,0.0\n"
      "b,1,0,-0.1,2.0,0.2,0.3\n";
  PanelDataset d = panel_from_csv(csv, basic_schema(),
                                  TruncationPolicy::truncate);
  CHECK(d.n_rows() == 3);  // a keeps t=1,2; b keeps t=1
  PanelDataset again = truncate_after_failure(d);
  CHECK(again.n_rows() == 3);
  for (std::size_t i = 0; i < d.n_rows(); ++i) {
    CHECK(again.records[i].entity == d.records[i].entity);
    CHECK(again.records[i].time == d.records[i].time);
  }
}

TEST_CASE("truncation leaves non-failing entities alone") {
  PanelDataset d = panel_from_csv(kTwoEntityCsv, basic_schema());
  PanelDataset t = truncate_after_failure(d);
  CHECK(t.n_rows() == d.n_rows());
}

TEST_CASE("build_frame emits one dummy per observed period") {
  PanelDataset d = panel_from_csv(kTwoEntityCsv, basic_schema());
  EstimationFrame f = build_frame(d);
  CHECK(f.n_periods() == 3);
  Matrix dums = f.time_dummies();
  CHECK(dums.cols() == 3);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) sum += dums(r, k);
    CHECK(sum == 1.0);
    CHECK(dums(r, f.row_period[r]) == 1.0);
  }
}

TEST_CASE("single entity failing in period 1") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "solo,1,1,0.5,1.0,0.1,0.2\n";
  PanelDataset d = panel_from_csv(csv, basic_schema());
  EstimationFrame f = build_frame(d);
  CHECK(f.rows() == 1);
  CHECK(f.n_entities() == 1);
  CHECK(f.delta[0] == 1);
  CHECK(f.final_period[0] == 1);
}

TEST_CASE("frame row count equals the independent per-entity recount") {
  DgpConfig cfg;
  cfg.n_entities = 100;
  cfg.t_max = 6;
  cfg.seed = 555;
  cfg.pi_exog = {{0.5}};
  cfg.pi_inst = {{1.0}};
  cfg.psi.assign(6, -1.2);
  cfg.beta1 = {0.5};
  cfg.beta2 = {1.0};
  PanelDataset d = generate_panel(cfg);
  EstimationFrame f = build_frame(d);

  // Independent recount straight off the raw records.
  std::size_t rows = 0;
  std::size_t events = 0;
  for (const auto& r : d.records) {
    ++rows;
    events += static_cast<std::size_t>(r.fail);
  }
  CHECK(f.rows() == rows);
  std::size_t s_sum = 0, delta_sum = 0, y_sum = 0;
  for (std::size_t i = 0; i < f.n_entities(); ++i) {
    s_sum += static_cast<std::size_t>(f.final_period[i]);
    delta_sum += static_cast<std::size_t>(f.delta[i]);
  }
  for (int y : f.y) y_sum += static_cast<std::size_t>(y);
  CHECK(s_sum == rows);        // administrative start at period 1, no gaps
  CHECK(delta_sum == events);  // each failing entity contributes one event
  CHECK(y_sum == delta_sum);
}

TEST_CASE("schema errors name the offending column") {
  CsvSchema s = basic_schema();
  s.fail = "событие";
  try {
    panel_from_csv(kTwoEntityCsv, s);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("событие") != std::string::npos);
  }
}

TEST_CASE("non-binary fail value is rejected") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "a,1,2,0.1,1.0,0.5,0.2\n";
  CHECK_THROWS_AS(panel_from_csv(csv, basic_schema()), DataError);
}

TEST_CASE("duplicate period is rejected") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "a,1,0,0.1,1.0,0.5,0.2\n"
      "a,1,0,0.2,1.0,0.4,0.1\n";
  try {
    panel_from_csv(csv, basic_schema());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("duplicate") != std::string::npos);
  }
}

TEST_CASE("gap in periods is rejected") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "a,1,0,0.1,1.0,0.5,0.2\n"
      "a,3,0,0.2,1.0,0.4,0.1\n";
  try {
    panel_from_csv(csv, basic_schema());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("gap") != std::string::npos);
  }
}

TEST_CASE("delayed entry is rejected rather than guessed at") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "a,2,0,0.1,1.0,0.5,0.2\n"
      "a,3,0,0.2,1.0,0.4,0.1\n";
  try {
    panel_from_csv(csv, basic_schema());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("first observed period") !=
          std::string::npos);
  }
}

TEST_CASE("missing value in a used column is a hard error") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "a,1,0,,1.0,0.5,0.2\n";
  CHECK_THROWS_AS(panel_from_csv(csv, basic_schema()), DataError);
}

TEST_CASE("non-finite covariate is rejected") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\n"
      "a,1,0,inf,1.0,0.5,0.2\n";
  CHECK_THROWS_AS(panel_from_csv(csv, basic_schema()), DataError);
}

TEST_CASE("cluster value must be constant within an entity") {
  CsvSchema s = basic_schema();
  s.cluster = "grp";
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2,grp\n"
      "a,1,0,0.1,1.0,0.5,0.2,g1\n"
      "a,2,0,0.2,1.0,0.4,0.1,g2\n";
  try {
    panel_from_csv(csv, s);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("cluster") != std::string::npos);
  }
}

TEST_CASE("quoted fields and CRLF line endings parse") {
  std::string csv =
      "entity,time,fail,x1,w1,z1,z2\r\n"
      "\"a,with comma\",1,1,0.1,1.0,0.5,0.2\r\n";
  PanelDataset d = panel_from_csv(csv, basic_schema());
  CHECK(d.records[0].entity == "a,with comma");
}
