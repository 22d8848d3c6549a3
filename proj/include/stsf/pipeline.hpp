#pragma once
// File-based pipeline stages behind the command-line tool. Every stage reads its inputs from the
// work directory written by earlier stages and writes its own subdirectory:
//
//   events/    ingest + identity      features/  monthly feature CSVs, group stats, Lasso
//   model/     checkpoint, evaluation forecast/  trajectories, month evaluation
//   explain/   surrogate explanations monitor/   alerts, bounce-up statistics
//   report/    plot-ready CSV bundles

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "stsf/core/csv.hpp"
#include "stsf/core/time.hpp"
#include "stsf/explain.hpp"
#include "stsf/features.hpp"
#include "stsf/identity.hpp"
#include "stsf/ingest.hpp"
#include "stsf/monitor.hpp"
#include "stsf/networks.hpp"
#include "stsf/seqmodel.hpp"
#include "stsf/synth.hpp"

namespace stsf::pipeline {

namespace fs = std::filesystem;

/// Bad input from the user (exit code 2).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A stage's inputs are absent because an earlier stage has not run (exit code 2).
struct MissingStageError : UsageError {
    MissingStageError(const std::string& stage, const fs::path& path)
        : UsageError("missing output of stage '" + stage + "': " + path.string() + " (run `stsf " + stage + "` first)"),
          stage(stage) {}
    std::string stage;
};

struct Log {
    std::function<void(const std::string&)> info_sink;
    std::function<void(const std::string&)> warn_sink;

    void info(const std::string& s) const {
        if (info_sink) info_sink(s);
    }
    void warn(const std::string& s) const {
        if (warn_sink) warn_sink(s);
    }
};

// ---------------------------------------------------------------------------
// Settings

using Settings = std::map<std::string, std::string>;

/// TOML-style subset: `key = value` lines, `[section]` headers prefixing keys with "section.",
/// `#` comments, optional double quotes around values.
inline Settings parse_config_text(std::string_view text, const std::string& origin = "config") {
    Settings out;
    std::string section;
    std::istringstream in{std::string(text)};
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = detail::trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError(origin + ":" + std::to_string(lineno) + ": bad section header");
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key(detail::trim(line.substr(0, eq)));
        std::string_view value = detail::trim(line.substr(eq + 1));
        if (!value.empty() && value.front() == '"') {
            auto close = value.find('"', 1);
            if (close == std::string_view::npos) throw UsageError(origin + ":" + std::to_string(lineno) + ": unterminated string");
            value = value.substr(1, close - 1);
        } else if (auto hash = value.find(" #"); hash != std::string_view::npos) {
            value = detail::trim(value.substr(0, hash));
        }
        if (key.empty()) throw UsageError(origin + ":" + std::to_string(lineno) + ": empty key");
        out[section.empty() ? key : section + "." + key] = std::string(value);
    }
    return out;
}

inline Settings load_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path.string());
}

/// Typed, validated access to settings.
class Options {
public:
    Options() = default;
    explicit Options(Settings s) : values_(std::move(s)) {}

    /// Later layers win.
    void merge(const Settings& s) {
        for (const auto& [k, v] : s) values_[k] = v;
    }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    const Settings& values() const { return values_; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        auto v = parse_double(it->second);
        if (!v) throw UsageError("setting " + key + ": expected a number, got '" + it->second + "'");
        return *v;
    }
    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        long long v = 0;
        auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
        if (ec != std::errc{} || p != it->second.data() + it->second.size())
            throw UsageError("setting " + key + ": expected an integer, got '" + it->second + "'");
        return v;
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
        if (ec != std::errc{} || p != it->second.data() + it->second.size())
            throw UsageError("setting " + key + ": expected a non-negative integer, got '" + it->second + "'");
        return v;
    }
    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::string v = detail::to_lower(it->second);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw UsageError("setting " + key + ": expected true/false, got '" + it->second + "'");
    }
    std::vector<std::size_t> get_list(const std::string& key) const {
        std::vector<std::size_t> out;
        auto it = values_.find(key);
        if (it == values_.end()) return out;
        std::string_view s = it->second;
        std::size_t pos = 0;
        while (pos <= s.size()) {
            auto comma = s.find(',', pos);
            auto tok = detail::trim(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
            if (!tok.empty()) {
                std::size_t v = 0;
                auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                if (ec != std::errc{} || p != tok.data() + tok.size())
                    throw UsageError("setting " + key + ": expected comma-separated integers");
                out.push_back(v);
            }
            if (comma == std::string_view::npos) break;
            pos = comma + 1;
        }
        return out;
    }

private:
    Settings values_;
};

template <typename Fn>
auto validated(Fn&& fn) {
    try {
        return fn();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

inline SynthConfig synth_config(const Options& o) {
    SynthConfig c;
    c.n_projects = static_cast<int>(o.get_int("n_projects", c.n_projects));
    c.min_months = static_cast<int>(o.get_int("min_months", c.min_months));
    c.max_months = static_cast<int>(o.get_int("max_months", c.max_months));
    c.label_prior = o.get_double("label_prior", c.label_prior);
    c.signal = o.get_double("signal", c.signal);
    c.seed = o.get_u64("seed", c.seed);
    validated([&] { c.validate(); return 0; });
    return c;
}

inline AssembleConfig assemble_config(const Options& o) {
    AssembleConfig c;
    auto mode = o.get_string("clustering", "transitivity");
    if (mode == "transitivity") c.clustering = ClusteringMode::transitivity;
    else if (mode == "mean_local") c.clustering = ClusteringMode::mean_local;
    else throw UsageError("setting clustering: expected transitivity or mean_local");
    c.cumulative_active_devs = o.get_bool("cumulative_active_devs", false);
    return c;
}

inline LassoConfig lasso_config(const Options& o) {
    LassoConfig c;
    c.lambda = o.get_double("lambda", c.lambda);
    if (c.lambda < 0.0) throw UsageError("lambda must be >= 0");
    return c;
}

inline TrainConfig train_config(const Options& o) {
    TrainConfig c;
    c.adam.learning_rate = o.get_double("learning_rate", c.adam.learning_rate);
    c.dropout_rate = o.get_double("dropout", c.dropout_rate);
    c.epochs = static_cast<int>(o.get_int("epochs", c.epochs));
    c.patience = static_cast<int>(o.get_int("patience", c.patience));
    c.seed = o.get_u64("seed", c.seed);
    c.train_fraction = o.get_double("train_fraction", c.train_fraction);
    c.validation_fraction = o.get_double("validation_fraction", c.validation_fraction);
    c.repeats = static_cast<int>(o.get_int("repeats", c.repeats));
    c.hidden = static_cast<Eigen::Index>(o.get_int("hidden", c.hidden));
    c.class_weighting = o.get_bool("class_weighting", c.class_weighting);
    c.threads = static_cast<unsigned>(o.get_int("threads", 0));
    validated([&] { c.validate(); return 0; });
    return c;
}

inline ExplainerConfig explainer_config(const Options& o) {
    ExplainerConfig c;
    c.num_samples = static_cast<int>(o.get_int("explain.num_samples", c.num_samples));
    if (o.has("explain.kernel_width")) c.kernel_width = o.get_double("explain.kernel_width", 0.0);
    c.ridge = o.get_double("explain.ridge", c.ridge);
    c.seed = o.get_u64("seed", c.seed);
    if (o.has("explain.bucket_months")) c.bucket_months = static_cast<std::size_t>(o.get_int("explain.bucket_months", 0));
    c.threads = static_cast<unsigned>(o.get_int("threads", 0));
    validated([&] { c.validate(); return 0; });
    return c;
}

inline DownturnConfig downturn_config(const Options& o) {
    DownturnConfig c;
    c.threshold = o.get_double("threshold", c.threshold);
    c.relative = o.get_bool("relative_drop", c.relative);
    if (!(c.threshold >= 0.0)) throw UsageError("threshold must be >= 0");
    return c;
}

inline IdentityConfig identity_config(const Options& o) {
    IdentityConfig c;
    c.min_name_tokens = static_cast<std::size_t>(o.get_int("identity.min_name_tokens", static_cast<long long>(c.min_name_tokens)));
    c.flag_email_threshold =
        static_cast<std::size_t>(o.get_int("identity.flag_email_threshold", static_cast<long long>(c.flag_email_threshold)));
    return c;
}

// ---------------------------------------------------------------------------
// File helpers

inline void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void require(const fs::path& path, const std::string& stage) {
    if (!fs::exists(path)) throw MissingStageError(stage, path);
}

// ---------------------------------------------------------------------------
// Manifest and labels

struct ManifestProject {
    std::string id;
    std::vector<fs::path> mbox;
    std::vector<fs::path> commits_csv;
};

struct PipelineManifest {
    fs::path corpus_root;
    fs::path labels;
    std::optional<fs::path> output;
    std::optional<fs::path> identity_overrides;
    std::vector<ManifestProject> projects;
    Settings config;
};

/// Relative paths resolve against the manifest directory (corpus_root) and corpus_root (all
/// others). Every referenced file must exist.
inline PipelineManifest load_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw UsageError("manifest not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    auto need = [&](const char* key) -> const nlohmann::json& {
        if (!j.contains(key)) throw UsageError("manifest " + path.string() + " lacks \"" + key + "\"");
        return j[key];
    };
    PipelineManifest m;
    fs::path base = path.parent_path();
    m.corpus_root = base / need("corpus_root").get<std::string>();
    auto resolve = [&](const std::string& rel) { return m.corpus_root / rel; };
    m.labels = resolve(need("labels").get<std::string>());
    if (!fs::exists(m.labels)) throw UsageError("labels file not found: " + m.labels.string());
    if (j.contains("output")) m.output = base / j["output"].get<std::string>();
    if (j.contains("identity_overrides")) {
        m.identity_overrides = resolve(j["identity_overrides"].get<std::string>());
        if (!fs::exists(*m.identity_overrides)) throw UsageError("identity override file not found: " + m.identity_overrides->string());
    }
    std::set<std::string> ids;
    for (const auto& pj : need("projects")) {
        ManifestProject p;
        p.id = pj.at("id").get<std::string>();
        if (p.id.empty() || p.id.find_first_of("/\\") != std::string::npos)
            throw UsageError("invalid project id '" + p.id + "'");
        if (!ids.insert(p.id).second) throw UsageError("duplicate project id '" + p.id + "' in manifest");
        for (const auto& f : pj.value("mbox", nlohmann::json::array())) p.mbox.push_back(resolve(f.get<std::string>()));
        for (const auto& f : pj.value("commits_csv", nlohmann::json::array()))
            p.commits_csv.push_back(resolve(f.get<std::string>()));
        for (const auto& f : p.mbox)
            if (!fs::exists(f)) throw UsageError("archive not found: " + f.string());
        for (const auto& f : p.commits_csv)
            if (!fs::exists(f)) throw UsageError("commit table not found: " + f.string());
        m.projects.push_back(std::move(p));
    }
    if (j.contains("config"))
        for (const auto& [k, v] : j["config"].items()) m.config[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return m;
}

struct LabelRow {
    int label = 0;
    Timestamp start{};
    Timestamp end{};  // exclusive: the day after the inclusive end date
};

/// CSV `project_id,grad_status,incubation_start,incubation_end`. grad_status is graduated/retired
/// (or 1/0); dates are RFC 3339 dates or timestamps, and a plain end date includes that whole day.
inline std::map<std::string, LabelRow> load_labels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read labels file " + path.string());
    std::map<std::string, LabelRow> out;
    try {
        CsvReader reader(in);
        auto c_id = reader.require_column("project_id");
        auto c_status = reader.require_column("grad_status");
        auto c_start = reader.require_column("incubation_start");
        auto c_end = reader.require_column("incubation_end");
        std::vector<std::string> row;
        while (reader.next(row)) {
            LabelRow r;
            auto status = detail::to_lower(detail::trim(row[c_status]));
            if (status == "graduated" || status == "1") r.label = 1;
            else if (status == "retired" || status == "0") r.label = 0;
            else throw UsageError("labels line " + std::to_string(reader.line()) + ": unknown grad_status '" + row[c_status] + "'");
            auto s = parse_rfc3339(row[c_start]);
            auto e = parse_rfc3339(row[c_end]);
            if (!s || !e) throw UsageError("labels line " + std::to_string(reader.line()) + ": bad incubation date");
            r.start = *s;
            r.end = detail::trim(row[c_end]).size() == 10 ? *e + std::chrono::days{1} : *e;
            if (!(r.end > r.start)) throw UsageError("labels line " + std::to_string(reader.line()) + ": incubation ends before it starts");
            out[row[c_id]] = r;
        }
    } catch (const CsvError& e) {
        throw UsageError("labels file " + path.string() + ": " + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Work directory layout

struct WorkDir {
    fs::path root;
    fs::path events() const { return root / "events"; }
    fs::path store() const { return events() / "store.json"; }
    fs::path features() const { return root / "features"; }
    fs::path feature_manifest() const { return features() / "manifest.json"; }
    fs::path model() const { return root / "model"; }
    fs::path checkpoint() const { return model() / "model.ckpt"; }
    fs::path splits() const { return model() / "splits.json"; }
    fs::path eval() const { return model() / "eval.csv"; }
    fs::path forecast() const { return root / "forecast"; }
    fs::path trajectories() const { return forecast() / "trajectories.csv"; }
    fs::path explain() const { return root / "explain"; }
    fs::path coefficients() const { return explain() / "project_coefficients.csv"; }
    fs::path monitor() const { return root / "monitor"; }
    fs::path report() const { return root / "report"; }
};

// ---------------------------------------------------------------------------
// synth

inline void cmd_synth(const Options& options, const fs::path& out_dir, const Log& log) {
    auto config = synth_config(options);
    auto corpus = generate(config);
    write_corpus(corpus, out_dir);
    log.info("wrote " + std::to_string(corpus.projects.size()) + " synthetic projects to " + out_dir.string());
}

// ---------------------------------------------------------------------------
// ingest

struct StoreProject {
    std::string id;
    int label = 0;
    Timestamp start{};
    Timestamp end{};
    IngestReport report;
    std::size_t contributors = 0;
    std::size_t flagged_identities = 0;
};

inline nlohmann::json to_store_json(const StoreProject& p) {
    return {{"id", p.id},
            {"label", p.label},
            {"start", format_rfc3339(p.start)},
            {"end", format_rfc3339(p.end)},
            {"report", p.report},
            {"contributors", p.contributors},
            {"flagged_identities", p.flagged_identities}};
}

inline StoreProject store_project_from_json(const nlohmann::json& j) {
    StoreProject p;
    p.id = j.at("id").get<std::string>();
    p.label = j.at("label").get<int>();
    p.start = *parse_rfc3339(j.at("start").get<std::string>());
    p.end = *parse_rfc3339(j.at("end").get<std::string>());
    p.report = j.at("report").get<IngestReport>();
    p.contributors = j.at("contributors").get<std::size_t>();
    p.flagged_identities = j.value("flagged_identities", std::size_t{0});
    return p;
}

struct Store {
    Settings config;  // manifest config carried to later stages
    std::vector<StoreProject> projects;
};

inline Store load_store(const WorkDir& w) {
    require(w.store(), "ingest");
    auto j = nlohmann::json::parse(read_text(w.store()));
    Store s;
    for (const auto& [k, v] : j.value("config", nlohmann::json::object()).items()) s.config[k] = v.get<std::string>();
    for (const auto& p : j.at("projects")) s.projects.push_back(store_project_from_json(p));
    return s;
}

/// Runs ingest and identity resolution per project and writes the canonical event files.
inline Store cmd_ingest(const fs::path& manifest_path, const WorkDir& w, const Options& options, const Log& log) {
    auto manifest = load_manifest(manifest_path);
    auto labels = load_labels(manifest.labels);
    IdentityOverrides overrides;
    if (manifest.identity_overrides) {
        std::ifstream in(*manifest.identity_overrides);
        overrides = load_identity_overrides(in);
    }
    Options opts(manifest.config);
    opts.merge(options.values());
    auto id_config = identity_config(opts);

    Store store;
    store.config = manifest.config;
    IngestReport total;
    fs::create_directories(w.events());
    for (const auto& mp : manifest.projects) {
        auto lab = labels.find(mp.id);
        if (lab == labels.end()) throw UsageError("project '" + mp.id + "' has no row in " + manifest.labels.string());
        std::vector<std::string> mboxes, tables;
        for (const auto& f : mp.mbox) mboxes.push_back(read_text(f));
        for (const auto& f : mp.commits_csv) tables.push_back(read_text(f));
        ProjectActivity act;
        try {
            act = ingest_project(mboxes, tables);
        } catch (const IngestError& e) {
            throw UsageError("project " + mp.id + ": " + e.what());
        }

        std::map<RawIdentity, std::size_t> seen;
        for (const auto& m : act.messages) ++seen[RawIdentity{m.sender_name, m.sender_email}];
        for (const auto& c : act.commits) ++seen[RawIdentity{c.author_name, c.author_email}];
        std::vector<std::pair<RawIdentity, std::size_t>> obs(seen.begin(), seen.end());
        auto ids = resolve_identities(obs, overrides, id_config);

        fs::path dir = w.events() / mp.id;
        std::ostringstream emails, commits, contributors;
        emails << "message_id,parent_id,sender,timestamp\n";
        for (const auto& m : act.messages) {
            std::string parent = m.in_reply_to ? *m.in_reply_to : (m.references.empty() ? "" : m.references.back());
            write_csv_row(emails, {m.message_id, parent, std::to_string(ids.lookup(m.sender_name, m.sender_email)),
                                   format_rfc3339(m.timestamp)});
        }
        commits << "commit,author,timestamp,file_path\n";
        for (std::size_t k = 0; k < act.commits.size(); ++k) {
            const auto& c = act.commits[k];
            auto author = std::to_string(ids.lookup(c.author_name, c.author_email));
            for (const auto& f : c.files) write_csv_row(commits, {std::to_string(k), author, format_rfc3339(c.timestamp), f});
        }
        contributors << "id,canonical_name,emails\n";
        for (const auto& c : ids.contributors) {
            std::string joined;
            for (const auto& e : c.emails) joined += (joined.empty() ? "" : ";") + e;
            write_csv_row(contributors, {std::to_string(c.id), c.canonical_name, joined});
        }
        write_text(dir / "emails.csv", emails.str());
        write_text(dir / "commits.csv", commits.str());
        write_text(dir / "contributors.csv", contributors.str());
        write_text(dir / "ingest_report.json", nlohmann::json(act.report).dump(2) + "\n");

        StoreProject sp{mp.id, lab->second.label, lab->second.start, lab->second.end, act.report,
                        ids.contributors.size(), ids.flagged.size()};
        if (!ids.flagged.empty())
            log.warn(mp.id + ": " + std::to_string(ids.flagged.size()) + " merged identities have more than " +
                     std::to_string(id_config.flag_email_threshold) + " addresses; review contributors.csv");
        total += act.report;
        store.projects.push_back(std::move(sp));
        log.info(mp.id + ": kept " + std::to_string(act.report.messages_kept()) + " emails, " +
                 std::to_string(act.commits.size()) + " commits, " + std::to_string(ids.contributors.size()) + " contributors");
    }

    nlohmann::json sj{{"format_version", 1}, {"config", store.config}, {"projects", nlohmann::json::array()}};
    for (const auto& p : store.projects) sj["projects"].push_back(to_store_json(p));
    write_text(w.store(), sj.dump(2) + "\n");
    write_text(w.events() / "ingest_report.json", nlohmann::json(total).dump(2) + "\n");
    return store;
}

/// Reads one project's canonical event files back.
inline ProjectEvents load_project_events(const WorkDir& w, const StoreProject& sp) {
    ProjectEvents p;
    p.project_id = sp.id;
    p.label = sp.label;
    p.start = sp.start;
    p.end = sp.end;
    fs::path dir = w.events() / sp.id;
    require(dir / "emails.csv", "ingest");
    require(dir / "commits.csv", "ingest");
    auto bad = [&](const std::string& file) { return std::runtime_error("corrupt event file " + (dir / file).string()); };
    {
        std::ifstream in(dir / "emails.csv");
        CsvReader r(in);
        auto c_id = r.require_column("message_id"), c_parent = r.require_column("parent_id");
        auto c_sender = r.require_column("sender"), c_ts = r.require_column("timestamp");
        std::vector<std::string> row;
        while (r.next(row)) {
            auto ts = parse_rfc3339(row[c_ts]);
            auto sender = parse_double(row[c_sender]);
            if (!ts || !sender) throw bad("emails.csv");
            EmailEvent e{row[c_id], std::nullopt, static_cast<ContributorId>(*sender), *ts};
            if (!row[c_parent].empty()) e.parent_id = row[c_parent];
            p.emails.push_back(std::move(e));
        }
    }
    {
        std::ifstream in(dir / "commits.csv");
        CsvReader r(in);
        auto c_commit = r.require_column("commit"), c_author = r.require_column("author");
        auto c_ts = r.require_column("timestamp"), c_path = r.require_column("file_path");
        std::vector<std::string> row;
        std::string current;
        while (r.next(row)) {
            auto ts = parse_rfc3339(row[c_ts]);
            auto author = parse_double(row[c_author]);
            if (!ts || !author) throw bad("commits.csv");
            if (p.commits.empty() || row[c_commit] != current) {
                current = row[c_commit];
                p.commits.push_back(CommitEvent{static_cast<ContributorId>(*author), *ts, {}});
            }
            p.commits.back().files.push_back(row[c_path]);
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// features

inline Options stage_options(const Store& store, const Options& options) {
    Options o(store.config);
    o.merge(options.values());
    return o;
}

inline std::vector<FeatureSequence> cmd_features(const WorkDir& w, const Options& cli, const Log& log) {
    auto store = load_store(w);
    auto options = stage_options(store, cli);
    auto config = assemble_config(options);
    bool dump_graphs = options.get_bool("dump_graphs", false);
    fs::create_directories(w.features());

    std::vector<FeatureSequence> corpus;
    std::vector<CorpusEntry> entries;
    std::vector<std::vector<double>> summaries;
    std::vector<int> labels;
    nlohmann::json assembly = nlohmann::json::array();
    std::ostringstream summary_csv;
    summary_csv << "project_id,label";
    for (auto n : k_feature_names) summary_csv << ',' << n;
    summary_csv << '\n';

    for (const auto& sp : store.projects) {
        auto events = load_project_events(w, sp);
        auto nets = build_monthly_networks(events);
        auto assembled = assemble(events, nets.months, config);
        if (!assembled) {
            log.warn(sp.id + ": no activity inside the incubation window; project excluded");
            assembly.push_back({{"project_id", sp.id}, {"excluded", true}});
            continue;
        }
        if (dump_graphs)
            for (const auto& mn : nets.months) {
                fs::path gdir = w.features() / "graphs" / sp.id / std::to_string(mn.month_index);
                std::ostringstream s, t;
                write_edge_list(s, mn.social);
                write_edge_list(t, mn.technical);
                write_text(gdir / "social.edges", s.str());
                write_text(gdir / "technical.edges", t.str());
            }
        std::ostringstream csv;
        write_feature_csv(csv, assembled->sequence);
        write_text(w.features() / (sp.id + ".csv"), csv.str());
        entries.push_back(CorpusEntry{sp.id, sp.label, assembled->sequence.months.size(), sp.id + ".csv"});
        auto summary = project_summary(events, assembled->sequence);
        summaries.emplace_back(summary.begin(), summary.end());
        labels.push_back(sp.label);
        summary_csv << csv_escape(sp.id) << ',' << sp.label;
        for (double x : summary) summary_csv << ',' << format_double(x);
        summary_csv << '\n';
        assembly.push_back({{"project_id", sp.id},
                            {"excluded", false},
                            {"months", assembled->sequence.months.size()},
                            {"undefined_top_fractions", assembled->undefined_top_fractions},
                            {"unknown_reply_parents", nets.unknown_parents}});
        corpus.push_back(std::move(assembled->sequence));
    }

    write_text(w.feature_manifest(), nlohmann::json(entries).dump(2) + "\n");
    write_text(w.features() / "project_summary.csv", summary_csv.str());
    write_text(w.features() / "assembly_report.json", assembly.dump(2) + "\n");

    std::ostringstream stats;
    stats << "feature,mean_grad,mean_ret,t,p\n";
    auto n_grad = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (n_grad >= 2 && labels.size() - n_grad >= 2) {
        std::vector<std::string> names(k_feature_names.begin(), k_feature_names.end());
        for (const auto& g : compare_groups(names, summaries, labels))
            stats << g.feature << ',' << format_double(g.mean_grad) << ',' << format_double(g.mean_ret) << ','
                  << format_double(g.test.t) << ',' << format_double(g.test.p) << '\n';
    } else {
        log.warn("group statistics skipped: need at least two graduated and two retired projects");
    }
    write_text(w.features() / "group_stats.csv", stats.str());

    std::ostringstream lasso;
    lasso << "feature,coefficient,selected\n";
    if (corpus.size() >= 2) {
        auto sel = lasso_select_features(corpus, lasso_config(options));
        for (std::size_t f = 0; f < k_feature_count; ++f)
            lasso << k_feature_names[f] << ',' << format_double(sel.fit.coefficients[static_cast<Eigen::Index>(f)]) << ','
                  << (sel.fit.coefficients[static_cast<Eigen::Index>(f)] != 0.0 ? 1 : 0) << '\n';
    } else {
        log.warn("Lasso selection skipped: need at least two projects");
    }
    write_text(w.features() / "lasso.csv", lasso.str());
    log.info("assembled features for " + std::to_string(corpus.size()) + " projects");
    return corpus;
}

inline std::vector<FeatureSequence> load_features(const WorkDir& w) {
    require(w.feature_manifest(), "features");
    return load_feature_corpus(w.feature_manifest());
}

// ---------------------------------------------------------------------------
// train

inline void write_metric_row(std::ostream& out, const std::string& month, const MetricSummary& s) {
    out << month << ',' << s.repeats << ',' << format_double(s.accuracy_mean) << ',' << format_double(s.accuracy_se) << ','
        << format_double(s.precision_mean) << ',' << format_double(s.precision_se) << ',' << format_double(s.recall_mean)
        << ',' << format_double(s.recall_se) << ',' << format_double(s.f1_mean) << ',' << format_double(s.f1_se) << '\n';
}

inline constexpr std::string_view k_eval_header =
    "month,repeats,accuracy_mean,accuracy_se,precision_mean,precision_se,recall_mean,recall_se,f1_mean,f1_se\n";

inline TrainOutcome cmd_train(const WorkDir& w, const Options& cli, const Log& log) {
    auto corpus = load_features(w);
    Options options = cli;
    if (fs::exists(w.store())) options = stage_options(load_store(w), cli);
    auto config = train_config(options);
    if (corpus.empty()) throw UsageError("no feature sequences to train on");
    TrainOutcome outcome;
    try {
        outcome = train(corpus, config);
    } catch (const ModelError& e) {
        throw UsageError(e.what());
    }

    fs::create_directories(w.model());
    {
        std::ofstream out(w.checkpoint(), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + w.checkpoint().string());
        save_checkpoint(out, outcome.model);
    }
    std::ostringstream eval;
    eval << k_eval_header;
    for (std::size_t m = 0; m < outcome.report.by_month.size(); ++m)
        if (outcome.report.by_month[m]) write_metric_row(eval, std::to_string(m + 1), *outcome.report.by_month[m]);
    write_metric_row(eval, "final", outcome.report.final_month);
    write_text(w.eval(), eval.str());

    nlohmann::json splits = nlohmann::json::array();
    std::ostringstream losses;
    losses << "repeat,epoch,train_loss,validation_loss\n";
    for (std::size_t r = 0; r < outcome.repeats.size(); ++r) {
        const auto& run = outcome.repeats[r];
        splits.push_back({{"repeat", r},
                          {"seed", run.seed},
                          {"best_epoch", run.fit.log.best_epoch},
                          {"train", run.train_ids},
                          {"validation", run.validation_ids},
                          {"test", run.test_ids}});
        for (std::size_t e = 0; e < run.fit.log.train_loss.size(); ++e)
            losses << r << ',' << (e + 1) << ',' << format_double(run.fit.log.train_loss[e]) << ','
                   << (e < run.fit.log.validation_loss.size() ? format_double(run.fit.log.validation_loss[e]) : "") << '\n';
    }
    write_text(w.splits(), splits.dump(2) + "\n");
    write_text(w.model() / "loss_log.csv", losses.str());
    const auto& f = outcome.report.final_month;
    log.info("final-month accuracy " + format_double(f.accuracy_mean) + " (se " + format_double(f.accuracy_se) + ") over " +
             std::to_string(f.repeats) + " repeats");
    return outcome;
}

inline TrainedModel load_model(const WorkDir& w) {
    require(w.checkpoint(), "train");
    std::ifstream in(w.checkpoint(), std::ios::binary);
    return load_checkpoint(in);
}

/// Project ids of one split ("train", "validation" or "test") of the checkpointed repeat.
inline std::set<std::string> load_split(const WorkDir& w, const std::string& which) {
    require(w.splits(), "train");
    auto j = nlohmann::json::parse(read_text(w.splits()));
    if (!j.is_array() || j.empty()) throw std::runtime_error("splits.json is empty");
    auto ids = j[0].at(which).get<std::vector<std::string>>();
    return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// forecast

struct EvalRow {
    std::string month;
    MetricSummary summary;
};

inline std::vector<EvalRow> read_eval_csv(const fs::path& path) {
    std::ifstream in(path);
    CsvReader r(in);
    std::vector<EvalRow> out;
    std::vector<std::string> row;
    auto num = [&](const char* col) { return parse_double(row[r.require_column(col)]).value_or(0.0); };
    while (r.next(row)) {
        EvalRow e;
        e.month = row[r.require_column("month")];
        e.summary.repeats = static_cast<std::size_t>(num("repeats"));
        e.summary.accuracy_mean = num("accuracy_mean");
        e.summary.accuracy_se = num("accuracy_se");
        e.summary.precision_mean = num("precision_mean");
        e.summary.precision_se = num("precision_se");
        e.summary.recall_mean = num("recall_mean");
        e.summary.recall_se = num("recall_se");
        e.summary.f1_mean = num("f1_mean");
        e.summary.f1_se = num("f1_se");
        out.push_back(std::move(e));
    }
    return out;
}

inline std::string format_metric_line(const std::string& label, const MetricSummary& s) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(4) << label << ": accuracy " << s.accuracy_mean << " ± " << s.accuracy_se
      << "  precision " << s.precision_mean << " ± " << s.precision_se << "  recall " << s.recall_mean << " ± "
      << s.recall_se << "  f1 " << s.f1_mean << " ± " << s.f1_se << "  (" << s.repeats << " repeats)";
    return o.str();
}

/// Writes trajectories for every project and the checkpointed model's per-month test metrics.
/// With `month`, prints that month's evaluation table (mean ± standard error over repeats).
inline std::vector<ForecastTrajectory> cmd_forecast(const WorkDir& w, std::optional<std::size_t> month, std::ostream& out,
                                                    const Log& log) {
    auto corpus = load_features(w);
    auto model = load_model(w);
    std::vector<ForecastTrajectory> trajectories;
    for (const auto& seq : corpus) trajectories.push_back(forecast_trajectory(model, seq));
    std::ostringstream traj;
    write_trajectories_csv(traj, trajectories);
    write_text(w.trajectories(), traj.str());

    auto test_ids = load_split(w, "test");
    std::vector<FeatureSequence> test;
    std::size_t max_len = 0;
    for (const auto& s : corpus)
        if (test_ids.count(s.project_id)) {
            test.push_back(s);
            max_len = std::max(max_len, s.months.size());
        }
    std::ostringstream me;
    me << "month,n,accuracy,precision,recall,f1\n";
    for (std::size_t m = 1; m <= max_len; ++m)
        if (auto r = evaluate(model, test, m))
            me << m << ',' << r->n << ',' << format_double(r->accuracy) << ',' << format_double(r->precision) << ','
               << format_double(r->recall) << ',' << format_double(r->f1) << '\n';
    write_text(w.forecast() / "month_eval.csv", me.str());
    log.info("wrote " + std::to_string(trajectories.size()) + " forecast trajectories");

    if (month) {
        if (*month < 1) throw UsageError("--month must be >= 1");
        require(w.eval(), "train");
        auto rows = read_eval_csv(w.eval());
        auto label = std::to_string(*month);
        auto it = std::find_if(rows.begin(), rows.end(), [&](const EvalRow& r) { return r.month == label; });
        if (it == rows.end()) out << "month " << *month << ": no test project reaches this month\n";
        else out << format_metric_line("month " + label, it->summary) << '\n';
        auto fin = std::find_if(rows.begin(), rows.end(), [](const EvalRow& r) { return r.month == "final"; });
        if (fin != rows.end()) out << format_metric_line("final", fin->summary) << '\n';
    }
    return trajectories;
}

inline std::vector<ForecastTrajectory> load_trajectories(const fs::path& path) {
    require(path, "forecast");
    std::ifstream in(path);
    return read_trajectories_csv(in);
}

// ---------------------------------------------------------------------------
// explain

inline std::vector<ExplanationSet> cmd_explain(const WorkDir& w, const Options& cli, const Log& log) {
    auto corpus = load_features(w);
    auto model = load_model(w);
    Options options = cli;
    if (fs::exists(w.store())) options = stage_options(load_store(w), cli);
    auto config = explainer_config(options);
    auto train_ids = load_split(w, "train");

    std::vector<FeatureSequence> scaled_train;
    for (const auto& s : corpus)
        if (train_ids.count(s.project_id)) scaled_train.push_back(apply_scaler(model.scaler, s));
    if (scaled_train.empty()) throw std::runtime_error("no training projects found for the explainer marginals");
    auto marginals = marginals_from(scaled_train);

    std::set<std::string> only;
    if (options.has("explain.projects")) {
        std::string list = options.get_string("explain.projects", "");
        std::stringstream ss(list);
        std::string id;
        while (std::getline(ss, id, ','))
            if (!detail::trim(id).empty()) only.insert(std::string(detail::trim(id)));
    }

    fs::create_directories(w.explain());
    std::vector<ExplanationSet> sets;
    std::vector<ProjectCoefficients> coefficients;
    for (const auto& seq : corpus) {
        if (!only.empty() && !only.count(seq.project_id)) continue;
        auto e = explain_project(model, seq, marginals, config);
        if (!e) {
            log.info(seq.project_id + ": shorter than the explanation bucket; skipped");
            continue;
        }
        write_text(w.explain() / (seq.project_id + ".json"), to_json(*e).dump(2) + "\n");
        coefficients.push_back(project_level(*e));
        sets.push_back(std::move(*e));
    }
    std::ostringstream pc, os, qc;
    write_project_coefficients_csv(pc, coefficients);
    write_text(w.coefficients(), pc.str());
    if (!coefficients.empty()) {
        write_overall_signs_csv(os, overall_level(coefficients));
    } else {
        os << "feature,positive,negative\n";
        log.warn("no projects explained");
    }
    write_text(w.explain() / "overall_signs.csv", os.str());
    qc << "feature,q1,q2,q3,q4\n";
    for (std::size_t f = 0; f < k_feature_count; ++f) {
        auto q = quarter_coefficients(sets, f);
        qc << k_feature_names[f];
        for (double v : q) qc << ',' << (std::isnan(v) ? "" : format_double(v));
        qc << '\n';
    }
    write_text(w.explain() / "quarter_coefficients.csv", qc.str());
    log.info("explained " + std::to_string(sets.size()) + " projects");
    return sets;
}

// ---------------------------------------------------------------------------
// monitor

struct MonitorResult {
    std::vector<std::string> alerts;  // JSON lines
    std::vector<BounceUpRecord> bounceup;
    std::vector<BounceUpSummary> summary;
};

/// Scans trajectories (forecast/trajectories.csv unless `trajectories` is set) for downturns and
/// attaches recommendations from explain/project_coefficients.csv when that file exists.
inline MonitorResult cmd_monitor(const WorkDir& w, const Options& cli, const Log& log) {
    Options options = cli;
    if (fs::exists(w.store())) options = stage_options(load_store(w), cli);
    fs::path traj_path = options.has("trajectories") ? fs::path(options.get_string("trajectories", "")) : w.trajectories();
    if (options.has("trajectories") && !fs::exists(traj_path)) throw UsageError("trajectory file not found: " + traj_path.string());
    auto trajectories = load_trajectories(traj_path);
    auto config = downturn_config(options);

    std::map<std::string, int> labels;
    if (fs::exists(w.feature_manifest())) {
        auto entries = nlohmann::json::parse(read_text(w.feature_manifest())).get<std::vector<CorpusEntry>>();
        for (const auto& e : entries) labels[e.project_id] = e.label;
    }
    std::map<std::string, ProjectCoefficients> coefficients;
    if (fs::exists(w.coefficients())) {
        std::ifstream in(w.coefficients());
        for (auto& pc : read_project_coefficients_csv(in)) coefficients[pc.project_id] = std::move(pc);
    } else {
        log.warn("no explanation coefficients (" + w.coefficients().string() + "); alerts carry no recommendations");
    }
    ActionTable table = default_action_table();
    if (options.has("action_table")) {
        std::ifstream in(options.get_string("action_table", ""));
        if (!in) throw UsageError("cannot read action table " + options.get_string("action_table", ""));
        try {
            table = read_action_table_tsv(in);
        } catch (const std::runtime_error& e) {
            throw UsageError(e.what());
        }
    }
    auto global_milestones = options.get_list("milestones");

    MonitorResult result;
    for (const auto& t : trajectories) {
        auto milestones = options.has("milestones." + t.project_id) ? options.get_list("milestones." + t.project_id) : global_milestones;
        for (const auto& ev : detect_downturns(t, config)) {
            std::optional<Recommendation> rec;
            if (auto it = coefficients.find(t.project_id); it != coefficients.end()) {
                rec = recommend(ev, it->second, table);
                if (rec->warning) log.warn(t.project_id + " month " + std::to_string(ev.month) + ": " + *rec->warning);
            }
            result.alerts.push_back(alert_line(ev, rec, in_milestone_window(ev.month, milestones)));
        }
        auto lab = labels.find(t.project_id);
        if (lab == labels.end()) continue;
        for (auto& r : bounceup_records(t, lab->second, config.threshold)) result.bounceup.push_back(std::move(r));
    }
    result.summary = bounceup_summary(result.bounceup);

    std::string alerts;
    for (const auto& a : result.alerts) alerts += a + "\n";
    write_text(w.monitor() / "alerts.jsonl", alerts);
    std::ostringstream b, s, at;
    write_bounceup_csv(b, result.bounceup);
    write_bounceup_summary_csv(s, result.summary);
    write_action_table_tsv(at, table);
    write_text(w.monitor() / "bounceup.csv", b.str());
    write_text(w.monitor() / "bounceup_summary.csv", s.str());
    write_text(w.monitor() / "action_table.tsv", at.str());
    log.info(std::to_string(result.alerts.size()) + " downturn alerts over " + std::to_string(trajectories.size()) + " trajectories");
    return result;
}

// ---------------------------------------------------------------------------
// report

/// Plot-ready bundles: accuracy by month, trajectories by label, bounce-up distributions and
/// medians, and quarter coefficients (when explanations exist).
inline void cmd_report(const WorkDir& w, const Log& log) {
    require(w.eval(), "train");
    require(w.trajectories(), "forecast");
    require(w.monitor() / "bounceup.csv", "monitor");
    fs::create_directories(w.report());

    std::ostringstream acc;
    acc << k_eval_header;
    for (const auto& row : read_eval_csv(w.eval()))
        if (row.month != "final") write_metric_row(acc, row.month, row.summary);
    write_text(w.report() / "accuracy_by_month.csv", acc.str());

    std::map<std::string, int> labels;
    auto entries = nlohmann::json::parse(read_text(w.feature_manifest())).get<std::vector<CorpusEntry>>();
    for (const auto& e : entries) labels[e.project_id] = e.label;
    std::ostringstream traj;
    traj << "label,project_id,month,forecast\n";
    auto trajectories = load_trajectories(w.trajectories());
    for (int label : {1, 0})
        for (const auto& t : trajectories) {
            auto it = labels.find(t.project_id);
            if (it == labels.end() || it->second != label) continue;
            for (std::size_t m = 0; m < t.forecasts.size(); ++m)
                traj << (label ? "graduated" : "retired") << ',' << csv_escape(t.project_id) << ',' << (m + 1) << ','
                     << format_double(t.forecasts[m]) << '\n';
        }
    write_text(w.report() / "trajectories_by_label.csv", traj.str());

    write_text(w.report() / "bounceup_distribution.csv", read_text(w.monitor() / "bounceup.csv"));
    if (fs::exists(w.monitor() / "bounceup_summary.csv"))
        write_text(w.report() / "bounceup_medians.csv", read_text(w.monitor() / "bounceup_summary.csv"));
    if (fs::exists(w.explain() / "quarter_coefficients.csv"))
        write_text(w.report() / "quarter_coefficients.csv", read_text(w.explain() / "quarter_coefficients.csv"));
    else
        log.warn("no explanations found; quarter coefficients omitted from the report");
    log.info("report written to " + w.report().string());
}

}  // namespace stsf::pipeline
