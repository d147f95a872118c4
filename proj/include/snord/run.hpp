#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "snord/common.hpp"
#include "snord/config.hpp"
#include "snord/data.hpp"

namespace snord {

// ---------------------------------------------------------------------------
// Run directories
//
//   <out>/<run-id>/manifest.json     RunManifest
//                  config.json       full config snapshot
//                  metrics.jsonl     one JSON object per line, append-only
//                  split.txt         SSL split file
//                  checkpoints/      model and optimizer state
//                  snapshots/        pseudo-label snapshots
//                  reports/          tables, summaries and plot data
//
// Every artifact the manifest references carries the FNV-1a hash of its bytes.

struct ArtifactRef {
    std::string path;  // relative to the run directory
    std::string hash;  // hex64 of the file content

    friend bool operator==(const ArtifactRef&, const ArtifactRef&) = default;
};

inline nlohmann::json to_json(const ArtifactRef& a) { return {{"path", a.path}, {"hash", a.hash}}; }

inline ArtifactRef artifact_from_json(const nlohmann::json& j) {
    return {j.at("path").get<std::string>(), j.at("hash").get<std::string>()};
}

struct StageRecord {
    std::string name;  // "generator" or "robust"
    std::string status = "running";
    int epochs_done = 0;
    int epochs_total = 0;
    std::map<std::string, ArtifactRef> checkpoints;
    std::map<std::string, ArtifactRef> snapshots;

    friend bool operator==(const StageRecord&, const StageRecord&) = default;
};

inline nlohmann::json to_json(const StageRecord& s) {
    nlohmann::json ck = nlohmann::json::object(), sn = nlohmann::json::object();
    for (const auto& [k, v] : s.checkpoints) ck[k] = to_json(v);
    for (const auto& [k, v] : s.snapshots) sn[k] = to_json(v);
    return {{"name", s.name},           {"status", s.status},   {"epochs_done", s.epochs_done},
            {"epochs_total", s.epochs_total}, {"checkpoints", ck}, {"snapshots", sn}};
}

inline StageRecord stage_from_json(const nlohmann::json& j) {
    StageRecord s;
    s.name = j.at("name").get<std::string>();
    s.status = j.at("status").get<std::string>();
    s.epochs_done = j.at("epochs_done").get<int>();
    s.epochs_total = j.at("epochs_total").get<int>();
    for (const auto& [k, v] : j.at("checkpoints").items()) s.checkpoints[k] = artifact_from_json(v);
    for (const auto& [k, v] : j.at("snapshots").items()) s.snapshots[k] = artifact_from_json(v);
    return s;
}

struct RunManifest {
    std::string run_id;
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::string split_fingerprint;
    nlohmann::json dataset = nlohmann::json::object();
    /// Run this one was built from (generator run of a two-stage robust run).
    std::string parent_run;
    std::vector<StageRecord> stages;
    /// Split file, reports and other run-level files.
    std::map<std::string, ArtifactRef> files;
    std::string status = "running";  // running | interrupted | completed | failed

    StageRecord* stage(const std::string& name) {
        for (auto& s : stages)
            if (s.name == name) return &s;
        return nullptr;
    }
    const StageRecord* stage(const std::string& name) const {
        for (const auto& s : stages)
            if (s.name == name) return &s;
        return nullptr;
    }
    StageRecord& ensure_stage(const std::string& name) {
        if (auto* s = stage(name)) return *s;
        stages.push_back({});
        stages.back().name = name;
        return stages.back();
    }

    std::vector<ArtifactRef> artifacts() const {
        std::vector<ArtifactRef> out;
        for (const auto& s : stages) {
            for (const auto& [k, v] : s.checkpoints) out.push_back(v);
            for (const auto& [k, v] : s.snapshots) out.push_back(v);
        }
        for (const auto& [k, v] : files) out.push_back(v);
        return out;
    }
};

inline nlohmann::json to_json(const RunManifest& m) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : m.stages) stages.push_back(to_json(s));
    nlohmann::json files = nlohmann::json::object();
    for (const auto& [k, v] : m.files) files[k] = to_json(v);
    return {{"format", "snord-run"},   {"version", 1},          {"run_id", m.run_id},
            {"command", m.command},    {"config", m.config},    {"seed", m.seed},
            {"split_fingerprint", m.split_fingerprint},          {"dataset", m.dataset},
            {"parent_run", m.parent_run}, {"stages", stages},   {"files", files},
            {"status", m.status}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "snord-run" || j.value("version", 0) != 1)
        fail(ErrorKind::io, "manifest: unsupported format");
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split_fingerprint = j.at("split_fingerprint").get<std::string>();
    m.dataset = j.at("dataset");
    m.parent_run = j.value("parent_run", "");
    for (const auto& s : j.at("stages")) m.stages.push_back(stage_from_json(s));
    for (const auto& [k, v] : j.at("files").items()) m.files[k] = artifact_from_json(v);
    m.status = j.at("status").get<std::string>();
    return m;
}

/// Content hash of a config; stable across key order.
inline std::string config_hash(const RunConfig& c) {
    const auto text = to_json(c).dump();
    Fnv1a h;
    h.update(text.data(), text.size());
    return hex64(h.digest());
}

/// "<command>-s<seed>-<first 8 hex digits of the config hash>".
inline std::string make_run_id(const std::string& command, const RunConfig& c) {
    return command + "-s" + std::to_string(c.seed) + "-" + config_hash(c).substr(0, 8);
}

/// Dataset descriptor recorded in manifests.
inline nlohmann::json describe_dataset(const RunConfig& c, const Dataset& train, const Dataset& test) {
    nlohmann::json d = {{"kind", c.dataset == "synthetic" ? "synthetic" : "directory"},
                        {"shape", {train.shape().channels, train.shape().height, train.shape().width}},
                        {"num_classes", train.num_classes()},
                        {"train_count", train.size()},
                        {"test_count", test.size()}};
    if (c.dataset == "synthetic") {
        d["synthetic_seed"] = c.seed;
    } else {
        d["path"] = c.dataset;
        d["header_hash"] = hex64(hash_file(c.dataset + "/header.json"));
    }
    return d;
}

class RunDir {
public:
    /// Creates <root>/<run_id> and its subdirectories.
    static RunDir create(const std::filesystem::path& root, const std::string& run_id) {
        RunDir r(root / run_id);
        for (const char* sub : {"checkpoints", "snapshots", "reports"}) std::filesystem::create_directories(r.dir_ / sub);
        return r;
    }
    /// Opens an existing run; missing_dependency when it does not exist.
    static RunDir open(const std::filesystem::path& root, const std::string& run_id) {
        RunDir r(root / run_id);
        if (!std::filesystem::exists(r.dir_ / "manifest.json"))
            fail(ErrorKind::missing_dependency, "run " + run_id + " not found under " + root.string());
        return r;
    }
    static bool exists(const std::filesystem::path& root, const std::string& run_id) {
        return std::filesystem::exists(root / run_id / "manifest.json");
    }

    const std::filesystem::path& dir() const noexcept { return dir_; }
    std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

    ArtifactRef write_artifact(const std::string& rel, std::string_view bytes) const {
        write_file_bytes(path(rel), bytes);
        Fnv1a h;
        h.update(bytes.data(), bytes.size());
        return {rel, hex64(h.digest())};
    }

    /// Reads an artifact after checking its hash.
    std::string read_artifact(const ArtifactRef& a) const {
        if (!std::filesystem::exists(path(a.path)))
            fail(ErrorKind::missing_dependency, "artifact " + a.path + " missing in " + dir_.string());
        auto bytes = read_file_bytes(path(a.path));
        Fnv1a h;
        h.update(bytes.data(), bytes.size());
        if (hex64(h.digest()) != a.hash) fail(ErrorKind::io, "artifact " + a.path + " fails hash verification");
        return bytes;
    }

    void verify(const RunManifest& m) const {
        for (const auto& a : m.artifacts()) read_artifact(a);
    }

    /// Appends one record to metrics.jsonl.
    void append_metric(const nlohmann::json& record) const {
        std::ofstream out(path("metrics.jsonl"), std::ios::binary | std::ios::app);
        if (!out) fail(ErrorKind::io, "cannot append to " + path("metrics.jsonl"));
        out << record.dump() << '\n';
    }

    std::vector<nlohmann::json> read_metrics() const {
        std::vector<nlohmann::json> out;
        if (!std::filesystem::exists(path("metrics.jsonl"))) return out;
        std::ifstream in(path("metrics.jsonl"), std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) fail(ErrorKind::io, "metrics.jsonl: malformed record");
            out.push_back(std::move(j));
        }
        return out;
    }

    /// Writes manifest.json. A completed manifest only accepts status changes.
    void save_manifest(const RunManifest& m) const {
        if (std::filesystem::exists(path("manifest.json"))) {
            const auto old = load_manifest();
            if (old.status == "completed") {
                auto a = to_json(old), b = to_json(m);
                a.erase("status");
                b.erase("status");
                if (a != b) fail(ErrorKind::invalid_argument, "manifest of completed run " + m.run_id + " is immutable");
            }
        }
        write_file_bytes(path("manifest.json"), to_json(m).dump(2) + "\n");
    }

    RunManifest load_manifest() const {
        auto j = nlohmann::json::parse(read_file_bytes(path("manifest.json")), nullptr, false);
        if (j.is_discarded()) fail(ErrorKind::io, "manifest.json is not valid JSON");
        return manifest_from_json(j);
    }

private:
    explicit RunDir(std::filesystem::path dir) : dir_(std::move(dir)) {}
    std::filesystem::path dir_;
};

/// Config stored in a manifest, revalidated.
inline RunConfig manifest_config(const RunManifest& m) {
    RunConfig c;
    apply_json(c, m.config);
    validate(c);
    return c;
}

}  // namespace snord
