#include "qtart/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace qtart {

namespace {

std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

void mean_std(const std::vector<double>& v, double& mean, double& stddev) {
    mean = 0.0;
    for (double x : v) {
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) {
        sq += (x - mean) * (x - mean);
    }
    stddev = std::sqrt(sq / static_cast<double>(v.size()));
}

}  // namespace

Json attack_params(const AttackSpec& spec) {
    return Json{{"eps", spec.eps},   {"step", spec.step},       {"steps", spec.steps},
                {"decay", spec.decay}, {"random_init", spec.random_init}, {"seed", spec.seed}};
}

Json train_record(const TrainReport& report, const ExperimentConfig& cfg) {
    Json epochs = Json::array();
    for (const EpochRecord& e : report.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"test_accuracy", e.test_accuracy},
                          {"iterations", e.iterations},
                          {"samples", e.samples},
                          {"seconds", e.seconds}});
    }
    Json j{{"kind", "train"},
           {"fingerprint", report.fingerprint},
           {"method", to_string(cfg.mode)},
           {"epochs", epochs},
           {"final_accuracy", report.final_accuracy},
           {"iterations_executed", report.iterations_executed},
           {"iterations_saved", report.iterations_saved},
           {"wall_seconds", report.wall_seconds},
           {"gamma", cfg.gamma},
           {"tau", cfg.tau},
           {"E", cfg.epochs}};
    if (report.mask) {
        j["mask_source"] = report.mask->source;
        j["removed"] = report.mask->removed();
    }
    return j;
}

Json attack_record(const std::string& fingerprint, const std::string& method, double clean_accuracy,
                   const std::vector<AttackResult>& results) {
    Json attacks = Json::array();
    for (const AttackResult& r : results) {
        attacks.push_back({{"attack", r.spec.name()},
                           {"kind", to_string(r.spec.kind)},
                           {"params", attack_params(r.spec)},
                           {"accuracy", r.accuracy}});
    }
    return Json{{"kind", "attack"},
                {"fingerprint", fingerprint},
                {"method", method},
                {"clean_accuracy", clean_accuracy},
                {"attacks", attacks}};
}

Json transfer_record(const std::string& fingerprint, const std::string& method, const AttackSpec& spec,
                     const TransferMatrix& m) {
    return Json{{"kind", "transfer"},
                {"fingerprint", fingerprint},
                {"method", method},
                {"target", m.target},
                {"attack", spec.name()},
                {"params", attack_params(spec)},
                {"sources", m.sources},
                {"accuracy", m.accuracy},
                {"mean", m.mean},
                {"std", m.stddev},
                {"includes_self", m.includes_self}};
}

void write_record(const std::filesystem::path& path, const Json& record) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out << record.dump(2) << '\n';
}

std::string attack_table(const Json& record) {
    std::ostringstream os;
    os << pad("attack", 10) << pad("eps", 10) << "accuracy%\n";
    os << pad("clean", 10) << pad("-", 10) << fixed(record.at("clean_accuracy").get<double>()) << '\n';
    for (const Json& a : record.at("attacks")) {
        os << pad(a.at("attack").get<std::string>(), 10) << pad(fixed(a.at("params").at("eps").get<double>(), 4), 10)
           << fixed(a.at("accuracy").get<double>()) << '\n';
    }
    return os.str();
}

ReportSummary summarize_records(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw std::runtime_error("results directory '" + dir.string() + "' does not exist");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    ReportSummary s;
    std::set<std::pair<std::string, std::string>> seen;
    std::map<std::pair<std::string, std::string>, std::vector<double>> attack_acc;
    for (const auto& f : files) {
        std::ifstream in(f);
        Json rec;
        try {
            in >> rec;
        } catch (const Json::exception& e) {
            s.warnings.push_back(f.filename().string() + ": not a result record (" + e.what() + ")");
            continue;
        }
        if (!rec.is_object() || !rec.contains("kind") || !rec.contains("fingerprint")) {
            s.warnings.push_back(f.filename().string() + ": not a result record");
            continue;
        }
        const std::string kind = rec["kind"].get<std::string>();
        const std::string fp = rec["fingerprint"].get<std::string>();
        if (!seen.insert({kind, fp}).second) {
            s.warnings.push_back(f.filename().string() + ": duplicate " + kind + " record for fingerprint " + fp +
                                 ", ignored");
            continue;
        }
        ++s.records;
        const std::string method = rec.value("method", std::string("unknown"));
        if (kind == "attack") {
            for (const Json& a : rec.at("attacks")) {
                attack_acc[{method, a.at("attack").get<std::string>()}].push_back(a.at("accuracy").get<double>());
            }
            attack_acc[{method, "clean"}].push_back(rec.at("clean_accuracy").get<double>());
        } else if (kind == "transfer") {
            TransferSummaryRow row;
            row.method = method;
            row.target = rec.at("target").get<std::string>();
            row.attack = rec.at("attack").get<std::string>();
            const auto acc = rec.at("accuracy").get<std::vector<double>>();
            row.sources = acc.size();
            mean_std(acc, row.mean, row.stddev);
            s.transfers.push_back(row);
        }
    }
    for (const auto& [key, values] : attack_acc) {
        AttackSummaryRow row;
        row.method = key.first;
        row.attack = key.second;
        row.n = values.size();
        mean_std(values, row.mean, row.stddev);
        s.attacks.push_back(row);
    }

    std::ostringstream os;
    os << "records: " << s.records << '\n';
    if (!s.attacks.empty()) {
        os << "\nper-attack accuracy (%)\n"
           << pad("method", 18) << pad("attack", 10) << pad("n", 4) << pad("mean", 9) << "std\n";
        for (const auto& r : s.attacks) {
            os << pad(r.method, 18) << pad(r.attack, 10) << pad(std::to_string(r.n), 4) << pad(fixed(r.mean), 9)
               << fixed(r.stddev) << '\n';
        }
    }
    if (!s.transfers.empty()) {
        os << "\ntransfer accuracy (%)\n"
           << pad("method", 18) << pad("target", 14) << pad("attack", 10) << pad("sources", 9) << pad("mean", 9)
           << "std\n";
        for (const auto& r : s.transfers) {
            os << pad(r.method, 18) << pad(r.target, 14) << pad(r.attack, 10) << pad(std::to_string(r.sources), 9)
               << pad(fixed(r.mean), 9) << fixed(r.stddev) << '\n';
        }
    }
    s.text = os.str();
    return s;
}

ReportSummary emit_report(const std::filesystem::path& dir, const std::filesystem::path& out) {
    ReportSummary s = summarize_records(dir);
    if (s.records == 0) {
        throw std::runtime_error("no result records in '" + dir.string() + "'");
    }
    std::filesystem::create_directories(out);
    {
        std::ofstream f(out / "summary.txt", std::ios::trunc);
        f << s.text;
    }
    {
        std::ofstream f(out / "polar.tsv", std::ios::trunc);
        f << "method\tattack\taccuracy\n";
        for (const auto& r : s.attacks) {
            if (r.attack != "clean") {
                f << r.method << '\t' << r.attack << '\t' << fixed(r.mean, 4) << '\n';
            }
        }
    }
    {
        std::ofstream f(out / "transfer.tsv", std::ios::trunc);
        f << "method\ttarget\tattack\tsources\tmean\tstd\n";
        for (const auto& r : s.transfers) {
            f << r.method << '\t' << r.target << '\t' << r.attack << '\t' << r.sources << '\t' << fixed(r.mean, 4)
              << '\t' << fixed(r.stddev, 4) << '\n';
        }
    }
    return s;
}

}  // namespace qtart
