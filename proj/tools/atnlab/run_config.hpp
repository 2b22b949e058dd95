#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "atnlab/data.hpp"

namespace atnlab::cli {

using Json = nlohmann::ordered_json;

/// Thrown for usage problems the flag parser cannot see (for example a
/// required key missing from both the flags and the config file).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Options of one subcommand, resolved as flags > config file > defaults.
/// Every flag is captured as text and converted to the type of its default.
class RunConfig {
public:
    explicit RunConfig(CLI::App* app);

    void flag(const std::string& key, Json fallback, const std::string& help);
    void required(const std::string& key, Json::value_t type, const std::string& help);

    /// Call after parsing.
    void resolve();

    const Json& values() const { return values_; }
    std::string str(const std::string& key) const;
    double num(const std::string& key) const;
    long long integer(const std::string& key) const;
    std::uint64_t seed(const std::string& key) const;
    bool has(const std::string& key) const;

private:
    struct Entry {
        std::string key;
        Json fallback;
        Json::value_t type;
        bool required = false;
        CLI::Option* option = nullptr;
        std::string text;
    };

    CLI::App* app_;
    std::string config_path_;
    std::vector<std::unique_ptr<Entry>> entries_;
    Json values_;
};

/// Dataset named by --data (synth | idx:<images>,<labels> | <container file>)
/// and narrowed by --split (train | eval | all).
Dataset resolve_dataset(const RunConfig& cfg);
void add_data_flags(RunConfig& cfg, const std::string& default_split);

std::vector<std::string> split_list(const std::string& text, char sep = ',');
std::vector<float> parse_floats(const std::string& text);
std::string stem_id(const std::filesystem::path& path);

/// Writes <output>.manifest.json.
class Manifest {
public:
    Manifest(std::string command, const RunConfig& cfg);

    void input(const std::filesystem::path& path);
    void output(const std::filesystem::path& path);
    void set(const std::string& key, Json value) { extra_[key] = std::move(value); }
    void dataset(const Dataset& data) { extra_["dataset_id"] = data.id; }
    void write(const std::filesystem::path& primary_output);

private:
    std::string command_;
    Json config_;
    Json inputs_ = Json::object();
    Json outputs_ = Json::object();
    Json extra_ = Json::object();
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Fails with a usage error unless the parent directory of `path` exists and
/// is writable.
void check_writable(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace atnlab::cli
