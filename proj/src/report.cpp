/* Copyright 2026 The AnonyPose Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "anonypose/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "anonypose/config.hpp"
#include "anonypose/errors.hpp"

namespace anonypose {

namespace {

// Display width in code points, so the dash cell aligns like one character.
std::size_t display_width(const std::string& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::string fmt_db(double v) {
  if (std::isnan(v)) return kMissingCell;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.2f}", v);
}

std::string fmt_ssim(double v) {
  if (!std::isfinite(v)) return kMissingCell;
  return fmt::format("{:.3f}", v);
}

std::string fmt_pct(double v) {
  if (!std::isfinite(v)) return kMissingCell;
  return fmt::format("{:.1f}", 100.0 * v);
}

std::string guidance_label(const GuidanceSpec& g) {
  switch (g.method) {
    case GuidanceMethod::kBlur: return fmt::format("blur r={}", g.radius);
    case GuidanceMethod::kPixelate: return fmt::format("pixelate r={}", g.radius);
    case GuidanceMethod::kNoise: return fmt::format("noise sigma={:g}", g.sigma);
  }
  return "?";
}

std::string ap_cell(const ExperimentResult& r, const char* label, bool recall) {
  const auto it = r.pose.find(label);
  if (it == r.pose.end()) return kMissingCell;
  return fmt_pct(recall ? it->second.ar : it->second.ap);
}

std::vector<std::string> missing_row(const std::string& first, std::size_t columns) {
  std::vector<std::string> row(columns, kMissingCell);
  row[0] = first;
  return row;
}

const ExperimentResult* find_first(std::span<const RunRecord> runs,
                                   const std::function<bool(const ExperimentResult&)>& match) {
  for (const auto& run : runs) {
    if (run.result && match(*run.result)) return &*run.result;
  }
  return nullptr;
}

std::string quoted(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string Table::to_text() const {
  std::vector<std::size_t> width(columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) width[c] = display_width(columns[c]);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) {
      width[c] = std::max(width[c], display_width(row[c]));
    }
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) out += "  ";
      out += cells[c];
      if (c + 1 < cells.size()) out.append(width[c] - display_width(cells[c]), ' ');
    }
    return out + "\n";
  };
  std::string out = title + "\n" + line(columns);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (const auto& row : rows) out += line(row);
  return out;
}

std::string Table::to_csv() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c > 0) out += ',';
      out += quoted(cells[c]);
    }
    out += "\n";
  };
  line(columns);
  for (const auto& row : rows) line(row);
  return out;
}

RunRecord read_run(const std::filesystem::path& run_dir) {
  RunRecord record;
  record.label = run_dir.filename().string();
  if (record.label.empty()) record.label = run_dir.parent_path().filename().string();
  const auto metrics = run_dir / "metrics.json";
  if (!std::filesystem::exists(metrics)) return record;
  std::ifstream in(metrics);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: malformed JSON: {}", metrics.string(), e.what()));
  }
  record.result = ExperimentResult::from_json(j);
  record.label = record.result->name;
  return record;
}

const std::vector<std::string>& enhanced_columns() {
  static const std::vector<std::string> c = {
      "run", "guidance", "backbone", "PSNR(o,p)", "SSIM(o,p)",
      "mAP@0.5{pre,o}", "mAR@0.5{pre,o}", "mAP@0.5{pre,p}", "mAR@0.5{pre,p}",
      "mAP@0.5{joint,p}", "mAR@0.5{joint,p}", "mAP@0.5{conv,p}", "mAR@0.5{conv,p}"};
  return c;
}

const std::vector<std::string>& recovered_columns() {
  static const std::vector<std::string> c = {"run", "guidance", "backbone", "PSNR(o,r)",
                                             "SSIM(o,r)", "mAP@0.5{joint,r}", "mAR@0.5{joint,r}"};
  return c;
}

const std::vector<std::string>& guidance_columns() {
  static const std::vector<std::string> c = {"guidance", "PSNR(o,p)", "SSIM(o,p)",
                                             "mAP@0.5{joint,p}", "mAR@0.5{joint,p}",
                                             "PSNR(o,r)", "SSIM(o,r)"};
  return c;
}

const std::vector<std::string>& backbone_columns() {
  static const std::vector<std::string> c = {"backbone", "PSNR(o,p)", "SSIM(o,p)",
                                             "mAP@0.5{joint,p}", "mAR@0.5{joint,p}",
                                             "PSNR(o,r)", "SSIM(o,r)", "ms/portrait"};
  return c;
}

const std::vector<std::string>& training_columns() {
  static const std::vector<std::string> c = {"run", "T", "L1 first 100", "L1 last 100",
                                             "gated L1 < 2T", "steps", "clip events"};
  return c;
}

std::vector<Table> build_report(std::span<const RunRecord> runs) {
  std::vector<Table> tables;

  Table enhanced{"privacy_enhanced", "Image quality and pose estimation on privacy-enhanced portraits",
                 enhanced_columns(), {}};
  Table recovered{"privacy_recovered", "Image quality and pose estimation on privacy-recovered portraits",
                  recovered_columns(), {}};
  Table training{"training", "Gated L1 convergence", training_columns(), {}};
  for (const auto& run : runs) {
    if (!run.result) {
      enhanced.rows.push_back(missing_row(run.label, enhanced.columns.size()));
      recovered.rows.push_back(missing_row(run.label, recovered.columns.size()));
      training.rows.push_back(missing_row(run.label, training.columns.size()));
      continue;
    }
    const auto& r = *run.result;
    const std::string g = guidance_label(r.guidance);
    enhanced.rows.push_back({r.name, g, r.backbone, fmt_db(r.op.psnr), fmt_ssim(r.op.ssim),
                             ap_cell(r, kPreO, false), ap_cell(r, kPreO, true),
                             ap_cell(r, kPreP, false), ap_cell(r, kPreP, true),
                             ap_cell(r, kJointP, false), ap_cell(r, kJointP, true),
                             ap_cell(r, kConvP, false), ap_cell(r, kConvP, true)});
    recovered.rows.push_back({r.name, g, r.backbone, fmt_db(r.orr.psnr), fmt_ssim(r.orr.ssim),
                              ap_cell(r, kJointR, false), ap_cell(r, kJointR, true)});
    training.rows.push_back({r.name, fmt::format("{:.4f}", r.threshold),
                             fmt::format("{:.4f}", r.l1_first_mean),
                             fmt::format("{:.4f}", r.l1_tail_mean),
                             r.gated_l1_converged ? "yes" : "no (did not converge below 2T)",
                             std::to_string(r.steps), std::to_string(r.clip_events)});
  }

  Table sweep{"guidance_sweep", "Impact of conventional desensitization guidance",
              guidance_columns(), {}};
  std::vector<GuidanceSpec> grid;
  for (int r : {2, 4, 8, 12}) grid.push_back({GuidanceMethod::kBlur, r, 0.1, 0});
  for (int r : {4, 8, 12, 16}) grid.push_back({GuidanceMethod::kPixelate, r, 0.1, 0});
  auto same_guidance = [](const GuidanceSpec& a, const GuidanceSpec& b) {
    if (a.method != b.method) return false;
    return a.method == GuidanceMethod::kNoise ? a.sigma == b.sigma : a.radius == b.radius;
  };
  for (const auto& run : runs) {
    if (!run.result) continue;
    const auto& g = run.result->guidance;
    if (std::none_of(grid.begin(), grid.end(), [&](const GuidanceSpec& x) { return same_guidance(x, g); })) {
      grid.push_back(g);
    }
  }
  for (const auto& g : grid) {
    const auto* r = find_first(runs, [&](const ExperimentResult& e) { return same_guidance(e.guidance, g); });
    if (r == nullptr) {
      sweep.rows.push_back(missing_row(guidance_label(g), sweep.columns.size()));
      continue;
    }
    sweep.rows.push_back({guidance_label(g), fmt_db(r->op.psnr), fmt_ssim(r->op.ssim),
                          ap_cell(*r, kJointP, false), ap_cell(*r, kJointP, true),
                          fmt_db(r->orr.psnr), fmt_ssim(r->orr.ssim)});
  }

  Table backbone{"backbone_study", "Impact of backbone architecture and inference speed",
                 backbone_columns(), {}};
  std::vector<std::string> names = {"unet_7", "unet_8", "resnet_6", "resnet_9"};
  for (const auto& run : runs) {
    if (run.result && std::find(names.begin(), names.end(), run.result->backbone) == names.end()) {
      names.push_back(run.result->backbone);
    }
  }
  for (const auto& name : names) {
    const auto* r = find_first(runs, [&](const ExperimentResult& e) { return e.backbone == name; });
    if (r == nullptr) {
      backbone.rows.push_back(missing_row(name, backbone.columns.size()));
      continue;
    }
    backbone.rows.push_back({name, fmt_db(r->op.psnr), fmt_ssim(r->op.ssim),
                             ap_cell(*r, kJointP, false), ap_cell(*r, kJointP, true),
                             fmt_db(r->orr.psnr), fmt_ssim(r->orr.ssim),
                             fmt::format("{:.2f}", r->generator_ms_per_portrait)});
  }

  tables.push_back(std::move(enhanced));
  tables.push_back(std::move(recovered));
  tables.push_back(std::move(sweep));
  tables.push_back(std::move(backbone));
  tables.push_back(std::move(training));
  return tables;
}

void write_report(std::span<const Table> tables, const std::filesystem::path& output_dir) {
  std::filesystem::create_directories(output_dir);
  std::ofstream text(output_dir / "report.txt");
  text << "mAP/mAR in percent at OKS 0.5; PSNR in dB; image metrics are portrait means.\n\n";
  for (const auto& t : tables) {
    text << t.to_text() << '\n';
    std::ofstream(output_dir / (t.name + ".csv")) << t.to_csv();
  }
  if (!text) throw Error(fmt::format("cannot write report into '{}'", output_dir.string()));
}

}  // namespace anonypose
