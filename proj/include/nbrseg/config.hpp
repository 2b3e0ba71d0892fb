#pragma once

// `key = value` configuration files. '#' starts a comment.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace nbrseg {

class KeyValueConfig {
public:
    static KeyValueConfig parse(std::istream& in, const std::string& source = "config") {
        KeyValueConfig cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            const auto t = trim(line);
            if (t.empty()) continue;
            const auto eq = t.find('=');
            if (eq == std::string_view::npos)
                throw ParseError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
            const std::string key(trim(t.substr(0, eq)));
            const std::string value(trim(t.substr(eq + 1)));
            if (key.empty()) throw ParseError(source + ":" + std::to_string(line_no) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static KeyValueConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open config: " + path.string());
        return parse(in, path.string());
    }

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    /// Overwrites `out` when the key is present and marks the key as used.
    template <class V>
    void get(const std::string& key, V& out) const {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        used_.insert(key);
        const std::string& s = it->second;
        if constexpr (std::is_same_v<V, bool>) {
            if (s == "true" || s == "1" || s == "yes") out = true;
            else if (s == "false" || s == "0" || s == "no") out = false;
            else throw ValidationError("config: '" + key + "' expects a boolean, got '" + s + "'");
        } else if constexpr (std::is_same_v<V, std::string>) {
            out = s;
        } else {
            V v{};
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size())
                throw ValidationError("config: '" + key + "' has invalid value '" + s + "'");
            out = v;
        }
    }

    /// Comma-separated list of numbers.
    template <class V>
    std::vector<V> get_list(const std::string& key) const {
        std::vector<V> out;
        auto it = values_.find(key);
        if (it == values_.end()) return out;
        used_.insert(key);
        std::string_view s = it->second;
        while (!s.empty()) {
            auto comma = s.find(',');
            auto item = trim(s.substr(0, comma));
            V v{};
            auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
            if (ec != std::errc{} || p != item.data() + item.size())
                throw ValidationError("config: '" + key + "' has invalid list entry '" + std::string(item) + "'");
            out.push_back(v);
            if (comma == std::string_view::npos) break;
            s.remove_prefix(comma + 1);
        }
        return out;
    }

    /// Keys never read through get()/get_list().
    std::vector<std::string> unused_keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) out.push_back(k);
        return out;
    }

private:
    static std::string_view trim(std::string_view s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string_view::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

} // namespace nbrseg
