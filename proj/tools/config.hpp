#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace angioseg::cli {

struct KeySpec {
    std::string key;  // section.name
    std::string default_value;
    std::string help;
};

/// Every accepted configuration key, in section order.
const std::vector<KeySpec>& schema();

/// Sections a subcommand reads.
std::vector<std::string> command_sections(std::string_view command);

/// Keys of the given sections.
std::vector<const KeySpec*> keys_for(const std::vector<std::string>& sections);

/// Closest candidate by edit distance, or empty when nothing is near.
std::string suggest(std::string_view word, const std::vector<std::string>& candidates);

class RunConfig {
public:
    RunConfig();

    /// Sectioned key = value file; unknown keys are rejected.
    void load_file(const std::filesystem::path& path);
    void set(const std::string& key, const std::string& value);

    bool is_set(const std::string& key) const;  // differs from the default
    const std::string& get(const std::string& key) const;
    std::filesystem::path path(const std::string& key) const;  // throws if empty
    int get_int(const std::string& key) const;
    std::int64_t get_int64(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;

private:
    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> defaults_;
};

}  // namespace angioseg::cli
