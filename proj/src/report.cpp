#include "beamsight/report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace beamsight::report {

using json = nlohmann::ordered_json;

namespace {

void check_rate(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0))
    throw std::invalid_argument(std::string("metric out of [0,1]: ") + name + " = " +
                                std::to_string(v));
}

json topn_json(const harness::TopN& t, const char* ctx) {
  check_rate(t.top1, ctx);
  check_rate(t.top3, ctx);
  check_rate(t.top5, ctx);
  return json{{"top1", t.top1}, {"top3", t.top3}, {"top5", t.top5}};
}

json scenario_json(const harness::ScenarioMetrics& m) {
  check_rate(m.id_frame_accuracy, "id_frame_accuracy");
  check_rate(m.containment_fan, "containment_fan");
  check_rate(m.containment_strip, "containment_strip");
  check_rate(m.overhead_reduction, "overhead_reduction");
  json windows;
  for (const auto& [mwin, acc] : m.id_window_accuracy) {
    check_rate(acc, "id_window_accuracy");
    windows["m" + std::to_string(mwin)] = acc;
  }
  return json{{"eval_frames", m.eval_frames},
              {"id", {{"frame_accuracy", m.id_frame_accuracy}, {"window_accuracy", windows}}},
              {"beam_gt", topn_json(m.beam_gt, "beam_gt")},
              {"beam_e2e", topn_json(m.beam_e2e, "beam_e2e")},
              {"beam_e2e_tracked_only", topn_json(m.beam_e2e_excl, "beam_e2e_tracked_only")},
              {"e2e_evaluated", m.e2e_evaluated},
              {"e2e_excluded", m.e2e_excluded},
              {"reid_events", m.reid_events},
              {"containment", {{"fan", m.containment_fan}, {"strip", m.containment_strip}}},
              {"search_space",
               {{"mean_bits", m.mean_search_bits},
                {"overhead_reduction", m.overhead_reduction},
                {"fallback_frames", m.fallback_frames}}}};
}

json ablation_json(const harness::AblationResult& a) {
  json j{{"name", a.name}};
  if (a.name == "1" || a.name == "2" || a.name == "3") {
    j["beam_a"] = topn_json(a.beam_a, "ablation beam_a");
    j["beam_b"] = topn_json(a.beam_b, "ablation beam_b");
  } else {
    check_rate(a.id_frame_accuracy_a, "ablation id accuracy");
    j["id_frame_accuracy_a"] = a.id_frame_accuracy_a;
    if (a.chi2_p_value >= 0) j["uniform_pick_p_value"] = a.chi2_p_value;
  }
  return j;
}

}  // namespace

std::string metrics_to_json_text(const harness::MetricsReport& report,
                                 const std::vector<harness::AblationResult>& ablations) {
  json j{{"schema_version", 1},
         {"scenario_a", scenario_json(report.scenario_a)},
         {"scenario_b", scenario_json(report.scenario_b)},
         {"beamnet_parameters", report.beamnet_parameters},
         {"id_parameters", report.id_parameters}};
  if (!ablations.empty()) {
    json arr = json::array();
    for (const auto& a : ablations) arr.push_back(ablation_json(a));
    j["ablations"] = arr;
  }
  return j.dump(2) + "\n";
}

namespace {

void flatten_json(const json& j, const std::string& prefix,
                  std::vector<std::pair<std::string, std::string>>& rows) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items())
      flatten_json(value, prefix.empty() ? key : prefix + "." + key, rows);
  } else if (j.is_array()) {
    int i = 0;
    for (const auto& value : j) flatten_json(value, prefix + "." + std::to_string(i++), rows);
  } else {
    rows.emplace_back(prefix, j.dump());
  }
}

}  // namespace

std::string metrics_to_csv_text(const harness::MetricsReport& report,
                                const std::vector<harness::AblationResult>& ablations) {
  const json j = json::parse(metrics_to_json_text(report, ablations));
  std::vector<std::pair<std::string, std::string>> rows;
  flatten_json(j, "", rows);
  std::string out = "metric,value\n";
  for (const auto& [key, value] : rows) out += key + "," + value + "\n";
  return out;
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& groups,
                          const std::vector<BarSeries>& series) {
  const int width = 640, height = 360;
  const int left = 60, bottom = 300, top = 48;
  const double plot_w = width - left - 24, plot_h = bottom - top;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "  <rect width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
  os << "  <text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
     << title << "</text>\n";
  for (int grid = 0; grid <= 4; ++grid) {
    const double y = bottom - plot_h * grid / 4.0;
    os << "  <line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << width - 24 << "\" y2=\"" << y
       << "\" stroke=\"#dddddd\"/>\n";
    os << "  <text x=\"" << left - 8 << "\" y=\"" << y + 4
       << "\" text-anchor=\"end\" font-size=\"11\">" << 25 * grid << "%</text>\n";
  }
  const char* palette[] = {"#3b6fb5", "#c96a2b", "#4f9c53", "#9c4f92", "#777777"};
  const std::size_t n_groups = groups.size();
  const std::size_t n_series = series.size();
  const double group_w = plot_w / std::max<std::size_t>(1, n_groups);
  const double bar_w = group_w * 0.7 / std::max<std::size_t>(1, n_series);
  for (std::size_t g = 0; g < n_groups; ++g) {
    for (std::size_t s = 0; s < n_series; ++s) {
      const double v = std::clamp(series[s].values[g], 0.0, 1.0);
      const double x = left + g * group_w + group_w * 0.15 + s * bar_w;
      const double h = plot_h * v;
      os << "  <rect x=\"" << x << "\" y=\"" << bottom - h << "\" width=\"" << bar_w * 0.9
         << "\" height=\"" << h << "\" fill=\"" << palette[s % 5] << "\"/>\n";
    }
    os << "  <text x=\"" << left + g * group_w + group_w / 2 << "\" y=\"" << bottom + 16
       << "\" text-anchor=\"middle\" font-size=\"12\">" << groups[g] << "</text>\n";
  }
  for (std::size_t s = 0; s < n_series; ++s) {
    const double x = left + s * 140.0;
    os << "  <rect x=\"" << x << "\" y=\"" << height - 26 << "\" width=\"12\" height=\"12\" fill=\""
       << palette[s % 5] << "\"/>\n";
    os << "  <text x=\"" << x + 18 << "\" y=\"" << height - 15 << "\" font-size=\"12\">"
       << series[s].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_report_files(const harness::MetricsReport& report,
                        const std::vector<harness::AblationResult>& ablations,
                        const harness::GeoContext& geo, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream os(dir + "/" + name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + dir + "/" + name);
    os << text;
  };
  write("metrics.json", metrics_to_json_text(report, ablations));
  write("metrics.csv", metrics_to_csv_text(report, ablations));

  const std::vector<std::string> groups = {"top1", "top3", "top5"};
  const auto& a = report.scenario_a;
  const auto& b = report.scenario_b;
  write("beam_accuracy_a.svg",
        bar_chart_svg("Beam prediction, training scenario", groups,
                      {{"ground-truth box", {a.beam_gt.top1, a.beam_gt.top3, a.beam_gt.top5}},
                       {"end-to-end", {a.beam_e2e.top1, a.beam_e2e.top3, a.beam_e2e.top5}}}));
  write("beam_accuracy_b.svg",
        bar_chart_svg("Beam prediction, transfer scenario", groups,
                      {{"ground-truth box", {b.beam_gt.top1, b.beam_gt.top3, b.beam_gt.top5}},
                       {"end-to-end", {b.beam_e2e.top1, b.beam_e2e.top3, b.beam_e2e.top5}}}));
  if (!ablations.empty()) {
    std::vector<BarSeries> series;
    for (const auto& abl : ablations) {
      if (abl.name == "1" || abl.name == "2" || abl.name == "3")
        series.push_back({"ablation " + abl.name,
                          {abl.beam_a.top1, abl.beam_a.top3, abl.beam_a.top5}});
    }
    if (!series.empty()) {
      series.insert(series.begin(),
                    {"full model", {a.beam_gt.top1, a.beam_gt.top3, a.beam_gt.top5}});
      write("ablations.svg", bar_chart_svg("Beam prediction ablations", groups, series));
    }
  }
  write("beam_regions.svg",
        geometry::regions_to_svg(geo.vp ? geo.fan_map : geo.strip_map, nullptr));
}

}  // namespace beamsight::report
