#pragma once

// Append-only metrics log (one key=value record per line, steps
// non-decreasing) and plain TSV result tables.

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnact {

struct MetricsError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class MetricsLog {
public:
    explicit MetricsLog(const std::string& path);

    /// Appends one record; throws if `step` goes backwards.
    void log(std::int64_t step, const std::vector<std::pair<std::string, double>>& values);

private:
    std::ofstream out_;
    std::int64_t last_step_ = -1;
};

struct MetricsRecord {
    std::int64_t step = 0;
    std::map<std::string, double> values;
};

std::vector<MetricsRecord> read_metrics(const std::string& path);

void write_tsv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::string read_text_file(const std::string& path);

}  // namespace dnact
