#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace bridgekit::cli {

using ParamValue = std::variant<bool, std::int64_t, double, std::string>;

/// Raised for malformed invocations and configs; maps to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParamSpec {
    std::string name;
    ParamValue default_value;
    std::string help;
};

class Params {
public:
    explicit Params(std::map<std::string, ParamValue> values) : values_(std::move(values)) {}
    double num(const std::string& key) const;
    std::int64_t integer(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    bool flag(const std::string& key) const;
    const std::string& str(const std::string& key) const;
    const std::map<std::string, ParamValue>& values() const { return values_; }

private:
    const ParamValue& at(const std::string& key) const;
    std::map<std::string, ParamValue> values_;
};

struct EmittedFile {
    std::string path;  ///< relative to the output directory
    std::string kind;
    std::string sha256;
    std::uintmax_t bytes = 0;
};

/// Tracks files an experiment writes so that they can be hashed or removed on failure.
class RunContext {
public:
    explicit RunContext(std::filesystem::path out) : out_(std::move(out)) {}
    std::filesystem::path file(const std::string& name, const std::string& kind);
    const std::filesystem::path& out() const { return out_; }
    const std::vector<EmittedFile>& files() const { return files_; }
    void remove_all() const;

private:
    std::filesystem::path out_;
    std::vector<EmittedFile> files_;
};

struct Experiment {
    std::string name;
    std::string summary;
    bool stochastic = true;
    std::vector<ParamSpec> params;
    void (*run)(const Params&, std::uint64_t seed, RunContext&) = nullptr;
};

const std::vector<Experiment>& experiments();
const Experiment& find_experiment(const std::string& name);

struct ExperimentConfig {
    std::string experiment;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out;
    std::map<std::string, ParamValue> params;  ///< overrides only
};

/// Loads a TOML config: top-level `experiment`, `seed`, `out` and a `[params]` table.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Parses `key=value` against the experiment's declared parameter types.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
/// Defaults merged with overrides; rejects unknown keys.
Params resolve_params(const ExperimentConfig& cfg);

struct RunManifest {
    std::string manifest_path;
    std::vector<EmittedFile> files;
    double wall_clock_seconds = 0.0;
};

/// Runs one experiment and writes manifest.json last. Partial outputs are removed on failure.
RunManifest run(const ExperimentConfig& cfg);

struct VerifyReport {
    bool ok = true;
    std::vector<std::string> problems;
    std::size_t checked = 0;
};

VerifyReport verify(const std::filesystem::path& manifest_path);

std::string sha256_file(const std::filesystem::path& path);

/// Exit codes: 0 success, 1 numerical fault or failed verification, 2 usage error.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bridgekit::cli
