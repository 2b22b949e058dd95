#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "atnlab/container.hpp"
#include "atnlab/error.hpp"

namespace atnlab::cli {

namespace {

Json convert(const std::string& key, const std::string& text, Json::value_t type) {
    auto bad = [&]() -> UsageError {
        return UsageError("--" + key + ": cannot parse '" + text + "'");
    };
    switch (type) {
        case Json::value_t::number_integer:
        case Json::value_t::number_unsigned: {
            long long v = 0;
            const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
            if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) throw bad();
            return v;
        }
        case Json::value_t::number_float: {
            double v = 0;
            const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
            if (r.ec != std::errc{} || r.ptr != text.data() + text.size()) throw bad();
            return v;
        }
        case Json::value_t::boolean:
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            throw bad();
        default: return text;
    }
}

}  // namespace

RunConfig::RunConfig(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON config file (a run manifest is accepted too)");
}

void RunConfig::flag(const std::string& key, Json fallback, const std::string& help) {
    auto e = std::make_unique<Entry>();
    e->key = key;
    e->type = fallback.type();
    e->fallback = std::move(fallback);
    std::string desc = help;
    if (!e->fallback.is_null()) {
        desc += " [" + (e->fallback.is_string() ? e->fallback.get<std::string>() : e->fallback.dump()) + "]";
    }
    e->option = app_->add_option("--" + key, e->text, desc);
    entries_.push_back(std::move(e));
}

void RunConfig::required(const std::string& key, Json::value_t type, const std::string& help) {
    auto e = std::make_unique<Entry>();
    e->key = key;
    e->type = type;
    e->required = true;
    e->option = app_->add_option("--" + key, e->text, help + " (required)");
    entries_.push_back(std::move(e));
}

void RunConfig::resolve() {
    Json file = Json::object();
    if (!config_path_.empty()) {
        std::ifstream in(config_path_);
        if (!in) {
            fail(ErrorCode::Io, "cannot open config " + config_path_);
        }
        try {
            file = Json::parse(in);
        } catch (const Json::exception& e) {
            fail(ErrorCode::CorruptHeader, "config " + config_path_ + " is not valid JSON: " + e.what());
        }
        // Manifests carry the resolved config under "config".
        if (file.contains("config") && file["config"].is_object()) {
            file = file["config"];
        }
    }
    values_ = Json::object();
    for (const auto& e : entries_) {
        if (e->option->count() > 0) {
            values_[e->key] = convert(e->key, e->text, e->type);
        } else if (file.contains(e->key)) {
            values_[e->key] = file[e->key];
        } else if (e->required) {
            throw UsageError("missing required option --" + e->key);
        } else {
            values_[e->key] = e->fallback;
        }
    }
}

std::string RunConfig::str(const std::string& key) const {
    const Json& v = values_.at(key);
    return v.is_string() ? v.get<std::string>() : v.dump();
}

double RunConfig::num(const std::string& key) const {
    const Json& v = values_.at(key);
    if (v.is_string()) {
        return convert(key, v.get<std::string>(), Json::value_t::number_float).get<double>();
    }
    return v.get<double>();
}

long long RunConfig::integer(const std::string& key) const {
    const Json& v = values_.at(key);
    if (v.is_string()) {
        return convert(key, v.get<std::string>(), Json::value_t::number_integer).get<long long>();
    }
    return v.get<long long>();
}

std::uint64_t RunConfig::seed(const std::string& key) const {
    const long long v = integer(key);
    if (v < 0) {
        throw UsageError("--" + key + " must be >= 0");
    }
    return static_cast<std::uint64_t>(v);
}

bool RunConfig::has(const std::string& key) const {
    return values_.contains(key) && !values_.at(key).is_null() &&
           !(values_.at(key).is_string() && values_.at(key).get<std::string>().empty());
}

void add_data_flags(RunConfig& cfg, const std::string& default_split) {
    cfg.flag("data", "synth", "synth | idx:<images>,<labels> | <dataset container>");
    cfg.flag("split", default_split, "train | eval | all");
    cfg.flag("train-fraction", 0.8, "fraction of the data in the train split");
    cfg.flag("data-seed", 1, "seed for synthetic rendering and the split");
    cfg.flag("synth-count", 2500, "number of synthetic images");
    cfg.flag("classes", 10, "number of synthetic classes");
    cfg.flag("side", 28, "synthetic image side in pixels");
}

Dataset resolve_dataset(const RunConfig& cfg) {
    const std::string spec = cfg.str("data");
    const std::uint64_t seed = cfg.seed("data-seed");
    Dataset all;
    if (spec == "synth") {
        const long long count = cfg.integer("synth-count");
        if (count <= 0) {
            throw UsageError("--synth-count must be positive");
        }
        all = synth_dataset(seed, static_cast<std::size_t>(count), static_cast<int>(cfg.integer("classes")),
                            static_cast<int>(cfg.integer("side")));
    } else if (spec.starts_with("idx:")) {
        const auto parts = split_list(spec.substr(4));
        if (parts.size() != 2) {
            throw UsageError("--data idx:<images>,<labels> expects two paths");
        }
        all = load_idx(parts[0], parts[1]);
    } else {
        all = load_dataset(spec);
    }
    const std::string which = cfg.str("split");
    if (which == "all") {
        return all;
    }
    if (which != "train" && which != "eval") {
        throw UsageError("--split must be train, eval or all");
    }
    auto [train, eval] = split(all, cfg.num("train-fraction"), seed);
    return which == "train" ? train : eval;
}

std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, sep)) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::vector<float> parse_floats(const std::string& text) {
    std::vector<float> out;
    for (const auto& item : split_list(text)) {
        float v = 0;
        const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
        if (r.ec != std::errc{} || r.ptr != item.data() + item.size()) {
            throw UsageError("cannot parse number '" + item + "'");
        }
        out.push_back(v);
    }
    return out;
}

std::string stem_id(const std::filesystem::path& path) { return path.stem().string(); }

Manifest::Manifest(std::string command, const RunConfig& cfg) : command_(std::move(command)), config_(cfg.values()) {}

void Manifest::input(const std::filesystem::path& path) { inputs_[path.string()] = file_hash(path); }

void Manifest::output(const std::filesystem::path& path) { outputs_[path.string()] = file_hash(path); }

void Manifest::write(const std::filesystem::path& primary_output) {
    Json j;
    j["command"] = command_;
    j["version"] = ATNLAB_VERSION;
    j["config"] = config_;
    Json seeds = Json::object();
    for (const auto& [key, value] : config_.items()) {
        if (key == "seed" || key.ends_with("-seed")) {
            seeds[key] = value;
        }
    }
    j["seeds"] = seeds;
    for (const auto& [key, value] : extra_.items()) {
        j[key] = value;
    }
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["duration_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text(primary_output.string() + ".manifest.json", j.dump(2) + "\n");
}

void check_writable(const std::filesystem::path& path) {
    std::filesystem::path dir = path.parent_path();
    if (dir.empty()) {
        dir = ".";
    }
    if (!std::filesystem::is_directory(dir) || ::access(dir.c_str(), W_OK) != 0) {
        throw UsageError("output path " + path.string() + " is not writable");
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
        fail(ErrorCode::Io, "cannot write " + path.string());
    }
}

}  // namespace atnlab::cli
