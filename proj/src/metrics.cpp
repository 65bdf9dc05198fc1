#include "dnact/metrics.hpp"

#include <sstream>

namespace dnact {

MetricsLog::MetricsLog(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw MetricsError("metrics: cannot open " + path);
}

void MetricsLog::log(std::int64_t step,
                     const std::vector<std::pair<std::string, double>>& values) {
    if (step < last_step_)
        throw MetricsError("metrics: step " + std::to_string(step) + " after " +
                           std::to_string(last_step_));
    last_step_ = step;
    out_ << "step=" << step;
    std::ostringstream num;
    num.precision(10);
    for (const auto& [key, value] : values) {
        num.str("");
        num << value;
        out_ << ' ' << key << '=' << num.str();
    }
    out_ << '\n';
    out_.flush();
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MetricsError("metrics: cannot open " + path);
    std::vector<MetricsRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricsRecord rec;
        std::istringstream row(line);
        std::string token;
        bool have_step = false;
        while (row >> token) {
            const auto eq = token.find('=');
            if (eq == std::string::npos) throw MetricsError("metrics: bad token " + token);
            const auto key = token.substr(0, eq);
            const auto value = token.substr(eq + 1);
            if (key == "step") {
                rec.step = std::stoll(value);
                have_step = true;
            } else {
                rec.values[key] = std::stod(value);
            }
        }
        if (!have_step) throw MetricsError("metrics: record without step");
        records.push_back(std::move(rec));
    }
    return records;
}

void write_tsv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw MetricsError("tsv: cannot write " + path);
    for (size_t i = 0; i < header.size(); ++i) out << (i ? "\t" : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size()) throw MetricsError("tsv: ragged row");
        for (size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
        out << '\n';
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MetricsError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace dnact
