#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "qtart/attacks.hpp"
#include "qtart/trainer.hpp"

namespace qtart {

using Json = nlohmann::json;

Json attack_params(const AttackSpec& spec);

struct AttackResult {
    AttackSpec spec;
    double accuracy = 0.0;
};

/// Result records; every record carries "kind", "fingerprint" and "method".
Json train_record(const TrainReport& report, const ExperimentConfig& cfg);
Json attack_record(const std::string& fingerprint, const std::string& method, double clean_accuracy,
                   const std::vector<AttackResult>& results);
Json transfer_record(const std::string& fingerprint, const std::string& method, const AttackSpec& spec,
                     const TransferMatrix& m);

/// Writes `record` as pretty JSON, replacing any previous file.
void write_record(const std::filesystem::path& path, const Json& record);

/// Plain-text table of one attack record.
std::string attack_table(const Json& record);

struct AttackSummaryRow {
    std::string method;
    std::string attack;
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;  // population, over records
};

struct TransferSummaryRow {
    std::string method;
    std::string target;
    std::string attack;
    std::size_t sources = 0;
    double mean = 0.0;
    double stddev = 0.0;
};

struct ReportSummary {
    std::vector<AttackSummaryRow> attacks;
    std::vector<TransferSummaryRow> transfers;
    std::vector<std::string> warnings;
    std::size_t records = 0;
    std::string text;
};

/// Reads every *.json record in `dir`. Records sharing kind and fingerprint
/// are counted once, with a warning.
ReportSummary summarize_records(const std::filesystem::path& dir);

/// Writes summary.txt, polar.tsv and transfer.tsv into `out`. Throws when
/// `dir` holds no records.
ReportSummary emit_report(const std::filesystem::path& dir, const std::filesystem::path& out);

}  // namespace qtart
