#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lingbridge {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitConfig = 3,
    kExitRuntime = 4,
    kExitValidation = 5,
};

/// Layered key/value settings ("section.key"): config file, then LINGBRIDGE_<SECTION>_<KEY>
/// environment variables, then flags. Only known keys are accepted, so nothing secret can
/// be smuggled into a snapshot: credentials are referenced by environment-variable name.
class Settings {
public:
    static const std::vector<std::string>& known_keys();

    void load_ini(const std::filesystem::path& path);
    void apply_env();
    void set(const std::string& key, std::string value);

    std::optional<std::string> get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;

    nlohmann::json snapshot() const;

private:
    std::map<std::string, std::string> values_;
};

struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, std::string> template_hashes;
    std::map<std::string, std::string> model_hashes;
    std::optional<std::uint64_t> seed;
    std::map<std::string, std::string> backends;
    std::vector<std::string> outputs;
    /// ISO-8601 UTC; taken from SOURCE_DATE_EPOCH when set so reruns can be byte-identical.
    std::string timestamp;

    nlohmann::json to_json() const;
    void write(const std::filesystem::path& path) const;
};

std::string manifest_timestamp();

/// Runs one subcommand. argv[0] is the program name. Data goes to `out`, logs to stderr.
int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out);
int cli_dispatch(const std::vector<std::string>& argv);

}  // namespace lingbridge
