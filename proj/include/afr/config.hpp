#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "afr/error.hpp"

namespace afr {

// ---------------------------------------------------------------------------
// Run configuration: a flat "section.key = value" text format. Every key
// has a schema entry with a default; unknown keys are rejected by name, and
// the fully resolved set is echoed into the run directory before a command
// executes.
// ---------------------------------------------------------------------------

class RunConfig {
public:
    RunConfig() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> table = {
            {"seed", "0"},
            {"data.n_total", "5000"},
            {"data.dims", "10"},
            {"data.group_proportions", "0.73,0.04,0.01,0.22"},
            {"data.core_separation", "1.2"},
            {"data.spurious_separation", "3.0"},
            {"data.noise_std", "1.0"},
            {"split.erm_fraction", "0.8"},
            {"split.val_fraction", "0.15"},
            {"split.test_fraction", "0.25"},
            {"split.stratified", "true"},
            {"stage1.hidden_sizes", "32,32"},
            {"stage1.epochs", "150"},
            {"stage1.learning_rate", "0.1"},
            {"stage1.batch_size", "32"},
            {"scheme.kind", "afr-exponential"},
            {"scheme.gamma", "4.0"},
            {"scheme.upweight_lambda", "20.0"},
            {"train.objective", "afr"},
            {"train.learning_rate", "0.01"},
            {"train.max_epochs", "500"},
            {"train.lambda", "0.0"},
            {"train.grad_clip_norm", "1.0"},
            {"train.early_stopping", "true"},
            {"sweep.gamma_grid", "0,1,2,4,8,12,16,20"},
            {"sweep.lambda_grid", "0,0.1,0.2,0.4"},
            {"sweep.learning_rate_grid", "0.01,0.05"},
            {"sweep.seeds", "0"},
            {"sweep.validation_fraction", "1.0"},
            {"label_efficiency.fractions", "0.05,0.25,1.0"},
            {"label_efficiency.seeds", "1,2,3"},
            {"balance.hidden_sizes", "128,128"},
            {"balance.steps", "2000"},
            {"balance.learning_rate", "0.001"},
            {"io.dataset", ""},
            {"io.embeddings", ""},
            {"io.stage1_head", ""},
        };
        return table;
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::string line;
        std::size_t line_no = 0;
        std::map<std::string, bool> seen;
        while (std::getline(in, line)) {
            ++line_no;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": expected \"key = value\"");
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (!defaults().count(key))
                throw ConfigError("unknown config key: " + key);
            if (seen.count(key)) throw ConfigError("duplicate config key: " + key);
            seen[key] = true;
            values_[key] = value;
        }
    }

    void set(const std::string& key, const std::string& value) {
        if (!defaults().count(key)) throw ConfigError("unknown config key: " + key);
        values_[key] = value;
    }

    const std::string& raw(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ConfigError("unknown config key: " + key);
        return it->second;
    }

    double get_double(const std::string& key) const {
        const std::string& s = raw(key);
        try {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(key + ": cannot parse \"" + s + "\" as a number");
        }
    }

    std::uint64_t get_u64(const std::string& key) const {
        const std::string& s = raw(key);
        try {
            std::size_t used = 0;
            unsigned long long v = std::stoull(s, &used);
            if (used != s.size() || s.empty() || s[0] == '-') throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(key + ": cannot parse \"" + s + "\" as an unsigned integer");
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string& s = raw(key);
        if (s == "true") return true;
        if (s == "false") return false;
        throw ConfigError(key + ": expected true or false, got \"" + s + "\"");
    }

    std::vector<double> get_double_list(const std::string& key) const {
        std::vector<double> out;
        for (const auto& item : split_list(raw(key), key)) {
            try {
                std::size_t used = 0;
                out.push_back(std::stod(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw ConfigError(key + ": cannot parse \"" + item + "\" as a number");
            }
        }
        return out;
    }

    std::vector<std::uint64_t> get_u64_list(const std::string& key) const {
        std::vector<std::uint64_t> out;
        for (const auto& item : split_list(raw(key), key)) {
            try {
                std::size_t used = 0;
                out.push_back(std::stoull(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw ConfigError(key + ": cannot parse \"" + item + "\" as an unsigned integer");
            }
        }
        return out;
    }

    // Resolved key = value lines, sorted by key.
    std::string resolved_text() const {
        std::ostringstream out;
        for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
        return out.str();
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static std::vector<std::string> split_list(const std::string& s, const std::string& key) {
        std::vector<std::string> out;
        std::size_t start = 0;
        for (;;) {
            std::size_t comma = s.find(',', start);
            std::string item = trim(comma == std::string::npos ? s.substr(start)
                                                               : s.substr(start, comma - start));
            if (item.empty()) throw ConfigError(key + ": empty list entry");
            out.push_back(item);
            if (comma == std::string::npos) return out;
            start = comma + 1;
        }
    }

    std::map<std::string, std::string> values_;
};

}  // namespace afr
