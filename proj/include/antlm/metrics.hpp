#pragma once

#include <fstream>
#include <string>

#include "antlm/eval.hpp"
#include "antlm/trainer.hpp"

namespace antlm {

// Append-only metrics CSV with the fixed schema
// epoch,phase_index,objective,step,lr,loss,perplexity,tokens_per_sec,wall_ms.
// Every row is flushed as one write so the file stays parseable after an
// abrupt kill.
class MetricsCsv {
public:
    explicit MetricsCsv(const std::string& path);
    void append(const MetricsRow& row);
    static std::string header();
    static std::string format_row(const MetricsRow& row);

private:
    std::ofstream out_;
    std::string path_;
};

// Train-time phase-boundary evaluation log:
// epoch,phase_index,objective,scoring_mode,macro_average,n_pairs.
class PhaseEvalCsv {
public:
    explicit PhaseEvalCsv(const std::string& path);
    void append(int64_t epoch, int64_t phase_index, Objective objective, const EvalReport& report);

private:
    std::ofstream out_;
};

std::string eval_report_csv(const EvalReport& report);
std::string eval_report_table(const EvalReport& report);

}  // namespace antlm
