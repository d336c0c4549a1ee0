#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pasture {

// Flat key=value run configuration. Every tunable in the pipeline has a key
// with a default; unknown keys are rejected by name. Each run writes the
// fully resolved configuration next to its outputs.
class RunConfig {
public:
    RunConfig();

    // Parse a config file ('#' comments, blank lines allowed) on top of the
    // defaults. Throws on unknown keys or malformed lines.
    void load_file(const std::string& path);

    // Override a single key, e.g. from a command line flag.
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key) const;
    double get_double(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // All keys with their resolved values, sorted for stable output.
    std::vector<std::pair<std::string, std::string>> resolved() const;
    void write_resolved(const std::string& path) const;

    static const std::map<std::string, std::string>& defaults();

private:
    std::map<std::string, std::string> values_;
};

}  // namespace pasture
