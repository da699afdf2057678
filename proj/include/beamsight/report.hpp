#pragma once

#include <map>
#include <string>
#include <vector>

#include "beamsight/harness.hpp"

namespace beamsight::report {

// Deterministic serialisation of a metrics report (plus any ablation rows);
// throws when a rate falls outside [0,1].
std::string metrics_to_json_text(const harness::MetricsReport& report,
                                 const std::vector<harness::AblationResult>& ablations = {});
std::string metrics_to_csv_text(const harness::MetricsReport& report,
                                const std::vector<harness::AblationResult>& ablations = {});

struct BarSeries {
  std::string label;
  std::vector<double> values;  // one per group
};

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& groups,
                          const std::vector<BarSeries>& series);

// metrics.json, metrics.csv, accuracy bar charts, and a beam-region overlay.
void write_report_files(const harness::MetricsReport& report,
                        const std::vector<harness::AblationResult>& ablations,
                        const harness::GeoContext& geo, const std::string& dir);

}  // namespace beamsight::report
