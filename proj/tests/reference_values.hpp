#pragma once

#include <array>
#include <string>
#include <vector>

// Published zero-shot mean F1 per prompt design (rows, catalog order) and
// model (columns), with the printed mean / population SD footers.
namespace ref {

inline const std::array<std::string, 6> kModels = {"Turbo03", "Turbo06", "GPT4", "SOLAR", "Beluga2", "Mixtral"};

inline const std::array<std::array<double, 6>, 10> kZeroShotF1 = {{
    {74.77, 73.62, 88.91, 72.59, 71.55, 68.29},
    {68.06, 63.74, 89.46, 79.25, 69.52, 62.13},
    {79.41, 65.88, 86.10, 47.28, 66.98, 41.65},
    {73.40, 76.20, 87.92, 70.38, 63.02, 43.20},
    {73.48, 71.21, 87.94, 61.09, 68.18, 59.51},
    {62.93, 65.16, 87.85, 77.02, 67.27, 61.50},
    {76.92, 47.53, 81.12, 25.97, 60.18, 33.59},
    {75.41, 74.19, 85.07, 48.58, 54.78, 36.12},
    {67.88, 60.22, 86.70, 74.42, 64.68, 32.04},
    {72.23, 55.65, 86.92, 66.60, 55.76, 30.94},
}};

inline const std::array<double, 6> kPrintedMean = {72.45, 65.34, 86.80, 62.32, 64.19, 46.90};
inline const std::array<double, 6> kPrintedSd = {4.64, 8.60, 2.26, 16.05, 5.41, 13.68};

inline std::vector<double> column(std::size_t m) {
  std::vector<double> out;
  for (const auto& row : kZeroShotF1) out.push_back(row[m]);
  return out;
}

// Cost scenario: mean token counts, printed cost per prompt in cents, and
// prices per one million tokens.
struct CostScenario {
  std::string scenario;
  std::string model;
  double prompt_tokens;
  double completion_tokens;
  double printed_cents;
};

inline const std::vector<CostScenario> kCostScenarios = {
    {"zero-shot", "Turbo03", 71, 49, 0.02}, {"zero-shot", "GPT4", 77, 40, 0.47},
    {"6-shot", "Turbo03", 639, 2, 0.10},    {"6-shot", "GPT4", 639, 2, 2.06},
    {"10-shot", "Turbo03", 942, 2, 0.15},   {"10-shot", "GPT4", 942, 2, 3.04},
};

inline constexpr double kTurbo03Prompt = 1.5, kTurbo03Completion = 2.0;
inline constexpr double kGpt4Prompt = 30.0, kGpt4Completion = 60.0;

}  // namespace ref
