#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace crosslm {

// Flat "key = value" run settings. Every key has a documented default;
// unknown keys are rejected. Command-line flags override file values.
class RunConfig {
public:
    struct Entry {
        const char* key;
        const char* value;
        const char* help;
    };

    RunConfig();

    static const std::vector<Entry>& schema();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    const std::string& get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;

    // One "key = value" line per key, current values.
    std::vector<std::string> dump() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace crosslm
