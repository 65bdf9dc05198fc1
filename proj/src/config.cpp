#include "dnact/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dnact {

namespace {

struct Field {
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

template <typename V>
V parse_value(const std::string& key, const std::string& raw);

template <>
int parse_value<int>(const std::string& key, const std::string& raw) {
    int v{};
    auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc{} || p != raw.data() + raw.size())
        throw ConfigError("config: bad integer for " + key + ": '" + raw + "'");
    return v;
}

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& raw) {
    std::uint64_t v{};
    auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc{} || p != raw.data() + raw.size())
        throw ConfigError("config: bad unsigned for " + key + ": '" + raw + "'");
    return v;
}

template <>
float parse_value<float>(const std::string& key, const std::string& raw) {
    try {
        size_t used = 0;
        const float v = std::stof(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad float for " + key + ": '" + raw + "'");
    }
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& raw) {
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError("config: bad bool for " + key + ": '" + raw + "'");
}

template <>
std::string parse_value<std::string>(const std::string&, const std::string& raw) {
    return raw;
}

std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(float v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        auto reg = [&t](const std::string& name, auto member) {
            using V = std::decay_t<decltype(Config{}.*member)>;
            t[name] = Field{
                [name, member](Config& c, const std::string& raw) {
                    c.*member = parse_value<V>(name, raw);
                },
                [member](const Config& c) { return format_value(c.*member); }};
        };
        reg("grid", &Config::grid);
        reg("d_v", &Config::d_v);
        reg("m_points", &Config::m_points);
        reg("diffusion_steps", &Config::diffusion_steps);
        reg("demos_per_task", &Config::demos_per_task);
        reg("expert_retries", &Config::expert_retries);
        reg("pretrain_steps", &Config::pretrain_steps);
        reg("pretrain_scenes", &Config::pretrain_scenes);
        reg("ray_batch", &Config::ray_batch);
        reg("n_samples", &Config::n_samples);
        reg("pretrain_lr", &Config::pretrain_lr);
        reg("train_steps", &Config::train_steps);
        reg("batch", &Config::batch);
        reg("point_variants", &Config::point_variants);
        reg("shift_aug", &Config::shift_aug);
        reg("lr", &Config::lr);
        reg("weight_decay", &Config::weight_decay);
        reg("lambda_trans", &Config::lambda_trans);
        reg("lambda_rot", &Config::lambda_rot);
        reg("lambda_open", &Config::lambda_open);
        reg("lambda_collide", &Config::lambda_collide);
        reg("lambda_diff", &Config::lambda_diff);
        reg("lambda_feat", &Config::lambda_feat);
        reg("eval_every", &Config::eval_every);
        reg("eval_episodes", &Config::eval_episodes);
        reg("max_keyframes", &Config::max_keyframes);
        reg("seed", &Config::seed);
        reg("tasks", &Config::tasks);
        reg("lfs", &Config::lfs);
        reg("no_diffusion", &Config::no_diffusion);
        reg("actions_from_diffusion", &Config::actions_from_diffusion);
        return t;
    }();
    return table;
}

}  // namespace

void Config::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("config: ") + name + " must be positive");
    };
    positive(grid, "grid");
    positive(d_v, "d_v");
    positive(m_points, "m_points");
    positive(diffusion_steps, "diffusion_steps");
    positive(demos_per_task, "demos_per_task");
    positive(pretrain_steps, "pretrain_steps");
    positive(pretrain_scenes, "pretrain_scenes");
    positive(ray_batch, "ray_batch");
    positive(n_samples, "n_samples");
    positive(train_steps, "train_steps");
    positive(batch, "batch");
    positive(point_variants, "point_variants");
    positive(eval_episodes, "eval_episodes");
    positive(max_keyframes, "max_keyframes");
    if (grid % 16 != 0) throw ConfigError("config: grid must be divisible by 16");
    if (tasks != "in" && tasks != "ood") throw ConfigError("config: tasks must be in|ood");
    if (lfs && actions_from_diffusion)
        throw ConfigError("config: actions_from_diffusion needs the full pipeline, not lfs");
    if (no_diffusion && actions_from_diffusion)
        throw ConfigError("config: actions_from_diffusion requires the diffusion objective");
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second.set(*this, value);
}

std::string Config::serialize() const {
    std::string out;
    for (const auto& [name, field] : fields()) {
        out += name;
        out += '=';
        out += field.get(*this);
        out += '\n';
    }
    return out;
}

std::uint64_t Config::hash() const {
    // FNV-1a over the canonical serialization
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : serialize()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Config parse_config(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.erase(hash_pos);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

}  // namespace dnact
