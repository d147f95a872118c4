#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "snord/attacks.hpp"
#include "snord/common.hpp"
#include "snord/data.hpp"
#include "snord/model.hpp"

namespace snord {

struct EvalSpecs {
    AttackSpec pgd = AttackSpec::pgd20();
    /// Multi-restart PGD reported as RA-strong.
    AttackSpec strong = AttackSpec::strong();
    bool run_strong = true;
    std::uint64_t seed = 0;

    static EvalSpecs for_epsilon(double eps, std::uint64_t seed = 0, int restarts = 5) {
        return {AttackSpec::pgd20(eps), AttackSpec::strong(eps, restarts), true, seed};
    }
};

struct EvalReport {
    std::string name;
    double sa = 0.0;
    double ra = 0.0;
    double ra_strong = 0.0;
    std::optional<double> pseudo_label_error;
    std::optional<double> relative_ra;
    std::vector<RobustRecord> records;
    std::vector<RobustRecord> strong_records;

    void validate() const {
        auto rate = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
        require(rate(sa) && rate(ra) && rate(ra_strong), "report: rates must lie in [0, 1]");
        require(!pseudo_label_error || rate(*pseudo_label_error), "report: pseudo-label error must lie in [0, 1]");
        require(!relative_ra || (std::isfinite(*relative_ra) && *relative_ra >= 0.0), "report: bad relative RA");
    }
};

/// SA, PGD-20 RA and RA-strong of a frozen model on a test set.
template <class T>
EvalReport evaluate(const Classifier<T>& model, const Dataset& test, const EvalSpecs& specs, std::string name = {}) {
    if (test.empty()) fail(ErrorKind::invalid_argument, "evaluate: empty test set");
    EvalReport r;
    r.name = std::move(name);
    const auto pgd = evaluate_robust_accuracy(model, test, specs.pgd, specs.seed);
    r.sa = pgd.standard_accuracy;
    r.ra = pgd.robust_accuracy;
    r.records = pgd.records;
    if (specs.run_strong) {
        const auto strong = evaluate_robust_accuracy(model, test, specs.strong, specs.seed);
        // Restart 0 of the strong attack shares its start with PGD-20; fold both in.
        r.strong_records = strong.records;
        std::size_t ok = 0;
        for (std::size_t k = 0; k < r.strong_records.size(); ++k) {
            auto& rec = r.strong_records[k];
            if (rec.robust && !r.records[k].robust) {
                rec.robust = false;
                rec.adversarial_prediction = r.records[k].adversarial_prediction;
            }
            ok += rec.robust;
        }
        r.ra_strong = static_cast<double>(ok) / static_cast<double>(r.strong_records.size());
    } else {
        r.ra_strong = r.ra;
    }
    r.validate();
    return r;
}

struct EpsilonPoint {
    double epsilon = 0.0;
    double sa = 0.0;
    double ra = 0.0;
};

/// RA over an increasing list of budgets on one frozen model.
///
/// Each budget runs its own PGD (step ε/4). Every ball contains the smaller
/// ones, so an adversarial point found at a smaller budget stays feasible and
/// is kept: an example is robust at ε only if it survived every attack up to ε.
template <class T>
std::vector<EpsilonPoint> robust_accuracy_curve(const Classifier<T>& model, const Dataset& test,
                                                std::span<const double> epsilons, int steps, int restarts,
                                                std::uint64_t seed) {
    require(!epsilons.empty(), "robust_accuracy_curve: no budgets");
    require(std::is_sorted(epsilons.begin(), epsilons.end()), "robust_accuracy_curve: budgets must increase");
    if (test.empty()) fail(ErrorKind::invalid_argument, "robust_accuracy_curve: empty test set");
    std::vector<char> alive;
    std::vector<EpsilonPoint> out;
    for (double eps : epsilons) {
        const AttackSpec spec{eps, eps / 4.0, steps, restarts, AttackObjective::ce_to_target, true};
        const auto res = evaluate_robust_accuracy(model, test, spec, seed);
        if (alive.empty()) alive.assign(res.records.size(), 1);
        std::size_t ok = 0;
        for (std::size_t k = 0; k < alive.size(); ++k) ok += (alive[k] = alive[k] && res.records[k].robust);
        out.push_back({eps, res.standard_accuracy, static_cast<double>(ok) / static_cast<double>(alive.size())});
    }
    return out;
}

/// report.RA / oracle.RA.
inline double relative_robustness(const EvalReport& report, const EvalReport& oracle) {
    if (!(oracle.ra > 0.0)) fail(ErrorKind::invalid_argument, "relative_robustness: oracle RA is zero");
    return report.ra / oracle.ra;
}

struct DerivedRates {
    double sa = 0.0;
    double ra = 0.0;
};

/// Recomputes SA and RA from per-example records.
inline DerivedRates rates_from_records(std::span<const RobustRecord> records) {
    require(!records.empty(), "rates_from_records: no records");
    std::size_t clean = 0, robust = 0;
    for (const auto& r : records) {
        clean += r.clean_correct;
        robust += r.robust;
    }
    const auto n = static_cast<double>(records.size());
    return {static_cast<double>(clean) / n, static_cast<double>(robust) / n};
}

// ---------------------------------------------------------------------------
// Output files
//
// Report table, one row per report, columns in this order:
//   name,sa,ra,ra_strong,pseudo_label_error,relative_ra
// Optional columns are left empty when absent. Numbers use %.6f.
//
// Per-example records:
//   index,label,clean_prediction,adversarial_prediction,clean_correct,robust
//
// Plot data: a "# x y" comment line naming both columns, then one
// whitespace-separated pair per line.

inline std::string format_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline const char* kReportColumns = "name,sa,ra,ra_strong,pseudo_label_error,relative_ra";

inline std::string format_report_csv(std::span<const EvalReport> reports) {
    std::ostringstream os;
    os << kReportColumns << "\n";
    for (const auto& r : reports) {
        os << csv_escape(r.name) << ',' << format_rate(r.sa) << ',' << format_rate(r.ra) << ','
           << format_rate(r.ra_strong) << ',' << (r.pseudo_label_error ? format_rate(*r.pseudo_label_error) : "")
           << ',' << (r.relative_ra ? format_rate(*r.relative_ra) : "") << "\n";
    }
    return os.str();
}

inline std::string format_records_csv(std::span<const RobustRecord> records) {
    std::ostringstream os;
    os << "index,label,clean_prediction,adversarial_prediction,clean_correct,robust\n";
    for (const auto& r : records)
        os << r.index << ',' << r.label << ',' << r.clean_prediction << ',' << r.adversarial_prediction << ','
           << int(r.clean_correct) << ',' << int(r.robust) << "\n";
    return os.str();
}

inline std::vector<RobustRecord> parse_records_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    std::vector<RobustRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        RobustRecord r;
        int cc = 0, rb = 0;
        if (std::sscanf(line.c_str(), "%zu,%d,%d,%d,%d,%d", &r.index, &r.label, &r.clean_prediction,
                        &r.adversarial_prediction, &cc, &rb) != 6)
            fail(ErrorKind::io, "records: malformed line '" + line + "'");
        r.clean_correct = cc != 0;
        r.robust = rb != 0;
        out.push_back(r);
    }
    return out;
}

inline std::string format_summary(std::span<const EvalReport> reports, const std::string& title = "") {
    std::ostringstream os;
    if (!title.empty()) os << title << "\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-28s %8s %8s %10s %9s %8s\n", "run", "SA", "RA", "RA-strong", "PL-err",
                  "rel-RA");
    os << buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-28s %7.2f%% %7.2f%% %9.2f%% %9s %8s\n", r.name.c_str(), 100 * r.sa,
                      100 * r.ra, 100 * r.ra_strong,
                      r.pseudo_label_error ? (format_rate(100 * *r.pseudo_label_error).substr(0, 6) + "%").c_str() : "-",
                      r.relative_ra ? format_rate(*r.relative_ra).substr(0, 5).c_str() : "-");
        os << buf;
    }
    return os.str();
}

inline std::string format_xy(std::span<const double> xs, std::span<const double> ys, const std::string& x_name,
                             const std::string& y_name) {
    require(xs.size() == ys.size(), "format_xy: length mismatch");
    std::ostringstream os;
    os << "# " << x_name << ' ' << y_name << "\n";
    char buf[64];
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6g %.6f\n", xs[i], ys[i]);
        os << buf;
    }
    return os.str();
}

}  // namespace snord
