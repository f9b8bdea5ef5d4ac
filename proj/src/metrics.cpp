#include "antlm/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "antlm/errors.hpp"

namespace antlm {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

}  // namespace

MetricsCsv::MetricsCsv(const std::string& path) : path_(path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot open metrics csv: " + path);
    if (fresh) {
        out_ << header() << "\n";
        out_.flush();
    }
}

std::string MetricsCsv::header() {
    return "epoch,phase_index,objective,step,lr,loss,perplexity,tokens_per_sec,wall_ms";
}

std::string MetricsCsv::format_row(const MetricsRow& r) {
    std::ostringstream os;
    os << r.epoch << ',' << r.phase_index << ',' << objective_name(r.objective) << ',' << r.step
       << ',' << fmt("%.8g", r.lr) << ',' << fmt("%.6f", r.loss) << ',' << fmt("%.6f", r.perplexity)
       << ',' << fmt("%.3f", r.tokens_per_sec) << ',' << r.wall_ms;
    return os.str();
}

void MetricsCsv::append(const MetricsRow& row) {
    out_ << format_row(row) << "\n";
    out_.flush();
}

PhaseEvalCsv::PhaseEvalCsv(const std::string& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot open phase eval csv: " + path);
    if (fresh) {
        out_ << "epoch,phase_index,objective,scoring_mode,macro_average,n_pairs\n";
        out_.flush();
    }
}

void PhaseEvalCsv::append(int64_t epoch, int64_t phase_index, Objective objective,
                          const EvalReport& report) {
    out_ << epoch << ',' << phase_index << ',' << objective_name(objective) << ','
         << scoring_mode_name(report.scoring_mode) << ',' << fmt("%.6f", report.macro_average)
         << ',' << report.n_pairs << "\n";
    out_.flush();
}

std::string eval_report_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "scoring_mode,phenomenon,n_pairs,accuracy\n";
    for (const auto& [phen, acc] : report.per_phenomenon) {
        os << scoring_mode_name(report.scoring_mode) << ',' << phen << ','
           << report.pairs_per_phenomenon.at(phen) << ',' << fmt("%.6f", acc) << "\n";
    }
    os << scoring_mode_name(report.scoring_mode) << ",macro_average," << report.n_pairs << ','
       << fmt("%.6f", report.macro_average) << "\n";
    return os.str();
}

std::string eval_report_table(const EvalReport& report) {
    std::ostringstream os;
    size_t width = std::string("phenomenon").size();
    for (const auto& [phen, _] : report.per_phenomenon) width = std::max(width, phen.size());
    os << "scoring mode: " << scoring_mode_name(report.scoring_mode) << "\n";
    os << std::string(width + 22, '-') << "\n";
    for (const auto& [phen, acc] : report.per_phenomenon) {
        os << phen << std::string(width - phen.size() + 2, ' ')
           << fmt("%8.4f", acc) << "  (n=" << report.pairs_per_phenomenon.at(phen) << ")\n";
    }
    os << std::string(width + 22, '-') << "\n";
    os << "macro average" << std::string(width >= 13 ? width - 13 + 2 : 2, ' ')
       << fmt("%8.4f", report.macro_average) << "  (n=" << report.n_pairs << ")\n";
    return os.str();
}

}  // namespace antlm
