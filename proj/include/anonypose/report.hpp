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

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anonypose/experiment.hpp"

namespace anonypose {

inline constexpr const char* kMissingCell = "—";

struct Table {
  std::string name;   // file stem of the CSV rendering
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string to_text() const;  // aligned columns under a title line
  std::string to_csv() const;   // RFC 4180 quoting
};

// One run directory; `result` is empty when its metrics file is absent.
struct RunRecord {
  std::string label;
  std::optional<ExperimentResult> result;
};

RunRecord read_run(const std::filesystem::path& run_dir);

// Column schemas, exactly as written to CSV.
const std::vector<std::string>& enhanced_columns();
const std::vector<std::string>& recovered_columns();
const std::vector<std::string>& guidance_columns();
const std::vector<std::string>& backbone_columns();
const std::vector<std::string>& training_columns();

// Tables: privacy_enhanced, privacy_recovered, guidance_sweep (blur 2/4/8/12,
// pixelate 4/8/12/16, then any other guidance present), backbone_study
// (unet_7, unet_8, resnet_6, resnet_9, then others) and training.
std::vector<Table> build_report(std::span<const RunRecord> runs);

// Writes report.txt plus one CSV per table.
void write_report(std::span<const Table> tables, const std::filesystem::path& output_dir);

}  // namespace anonypose
