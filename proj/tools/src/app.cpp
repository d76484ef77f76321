#include "app.hpp"

#include "bridgekit/common.hpp"
#include "bridgekit/io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <array>
#include <chrono>
#include <charconv>
#include <fstream>
#include <memory>
#include <sstream>

namespace bridgekit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

const ParamValue& Params::at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("undeclared parameter '" + key + "'");
    return it->second;
}

double Params::num(const std::string& key) const {
    const auto& v = at(key);
    if (auto d = std::get_if<double>(&v)) return *d;
    if (auto i = std::get_if<std::int64_t>(&v)) return double(*i);
    throw UsageError("parameter '" + key + "' is not numeric");
}

std::int64_t Params::integer(const std::string& key) const {
    const auto& v = at(key);
    if (auto i = std::get_if<std::int64_t>(&v)) return *i;
    throw UsageError("parameter '" + key + "' is not an integer");
}

std::size_t Params::count(const std::string& key) const {
    auto v = integer(key);
    if (v < 0) throw UsageError("parameter '" + key + "' must be nonnegative");
    return std::size_t(v);
}

bool Params::flag(const std::string& key) const {
    const auto& v = at(key);
    if (auto b = std::get_if<bool>(&v)) return *b;
    throw UsageError("parameter '" + key + "' is not a boolean");
}

const std::string& Params::str(const std::string& key) const {
    const auto& v = at(key);
    if (auto s = std::get_if<std::string>(&v)) return *s;
    throw UsageError("parameter '" + key + "' is not a string");
}

fs::path RunContext::file(const std::string& name, const std::string& kind) {
    files_.push_back({name, kind, {}, 0});
    return out_ / name;
}

void RunContext::remove_all() const {
    std::error_code ec;
    for (const auto& f : files_) fs::remove(out_ / f.path, ec);
    fs::remove(out_ / "manifest.json", ec);
}

const Experiment& find_experiment(const std::string& name) {
    for (const auto& e : experiments())
        if (e.name == name) return e;
    throw UsageError("unknown experiment '" + name + "' (see `bridgekit list`)");
}

namespace {

const ParamSpec& find_param(const Experiment& e, const std::string& key) {
    for (const auto& p : e.params)
        if (p.name == key) return p;
    throw UsageError("unknown parameter '" + key + "' for experiment '" + e.name + "'");
}

std::string type_name(const ParamValue& v) {
    switch (v.index()) {
        case 0: return "boolean";
        case 1: return "integer";
        case 2: return "float";
        default: return "string";
    }
}

ParamValue parse_as(const ParamValue& like, const std::string& key, const std::string& text) {
    auto bad = [&] { return UsageError("cannot parse '" + text + "' as " + type_name(like) + " for '" + key + "'"); };
    switch (like.index()) {
        case 0:
            if (text == "true" || text == "1") return true;
            if (text == "false" || text == "0") return false;
            throw bad();
        case 1: {
            std::int64_t v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || p != text.data() + text.size()) throw bad();
            return v;
        }
        case 2: {
            double v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || p != text.data() + text.size()) throw bad();
            return v;
        }
        default: return text;
    }
}

ParamValue from_toml(const ParamValue& like, const std::string& key, const toml::node& node) {
    auto bad = [&] { return UsageError("parameter '" + key + "' must be " + type_name(like)); };
    switch (like.index()) {
        case 0:
            if (auto b = node.value<bool>(); b && node.is_boolean()) return *b;
            throw bad();
        case 1:
            if (node.is_integer()) return *node.value<std::int64_t>();
            throw bad();
        case 2:
            if (node.is_floating_point() || node.is_integer()) return *node.value<double>();
            throw bad();
        default:
            if (node.is_string()) return *node.value<std::string>();
            throw bad();
    }
}

json to_json(const ParamValue& v) {
    return std::visit([](const auto& x) { return json(x); }, v);
}

std::uint64_t parse_seed(const std::string& text) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size()) throw UsageError("seed must be a nonnegative integer");
    return v;
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

void check_invariants(const fs::path& file, const std::string& kind, std::vector<std::string>& problems) {
    const std::string name = file.filename().string();
    try {
        if (kind == "coupling") {
            Mat m = io::read_matrix_csv(file);
            if (m.minCoeff() < 0.0) problems.push_back(name + ": negative coupling entry");
            if (!near(m.sum(), 1.0, 1e-8)) problems.push_back(name + ": coupling mass " + io::format_number(m.sum()));
        } else if (kind == "marginals") {
            auto t = io::read_csv(file);
            for (const auto& row : t.rows) {
                double s = 0.0;
                for (std::size_t j = 1; j < row.size(); ++j) {
                    if (row[j] < 0.0) problems.push_back(name + ": negative probability");
                    s += row[j];
                }
                if (!near(s, 1.0, 1e-8)) {
                    problems.push_back(name + ": marginal at t=" + io::format_number(row[0]) + " sums to " +
                                       io::format_number(s));
                    break;
                }
            }
        } else if (kind == "rate_matrix") {
            auto q = io::read_rate_matrix(file);
            for (const auto& piece : q.pieces) {
                double worst = piece.rowwise().sum().cwiseAbs().maxCoeff();
                if (worst > 1e-9) problems.push_back(name + ": generator row sum " + io::format_number(worst));
            }
        } else if (file.extension() == ".json") {
            std::ifstream in(file);
            const json doc = json::parse(in);
            if (doc.is_discarded()) problems.push_back(name + ": invalid JSON");
        } else if (file.extension() == ".csv") {
            (void)io::read_csv(file);
        }
    } catch (const std::exception& e) {
        problems.push_back(name + ": unreadable (" + e.what() + ")");
    }
}

}  // namespace

ExperimentConfig load_config(const fs::path& path) {
    toml::table tbl;
    try {
        tbl = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config " << path.string() << ": " << e.description() << " at line " << e.source().begin.line;
        throw UsageError(msg.str());
    } catch (const std::exception& e) {
        throw UsageError("config " + path.string() + ": " + e.what());
    }
    ExperimentConfig cfg;
    for (const auto& [k, v] : tbl) {
        const std::string key(k.str());
        if (key == "experiment") {
            if (!v.is_string()) throw UsageError("config: 'experiment' must be a string");
            cfg.experiment = *v.value<std::string>();
        } else if (key == "seed") {
            auto s = v.value<std::int64_t>();
            if (!v.is_integer() || *s < 0) throw UsageError("config: 'seed' must be a nonnegative integer");
            cfg.seed = std::uint64_t(*s);
        } else if (key == "out") {
            if (!v.is_string()) throw UsageError("config: 'out' must be a string");
            cfg.out = *v.value<std::string>();
        } else if (key != "params") {
            throw UsageError("config: unknown key '" + key + "'");
        }
    }
    if (cfg.experiment.empty()) throw UsageError("config: missing 'experiment'");
    const auto& exp = find_experiment(cfg.experiment);
    if (auto params = tbl["params"]; params) {
        auto* t = params.as_table();
        if (!t) throw UsageError("config: 'params' must be a table");
        for (const auto& [k, v] : *t) {
            const std::string key(k.str());
            cfg.params[key] = from_toml(find_param(exp, key).default_value, key, v);
        }
    }
    return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
    std::string key = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    const auto& spec = find_param(find_experiment(cfg.experiment), key);
    cfg.params[key] = parse_as(spec.default_value, key, value);
}

Params resolve_params(const ExperimentConfig& cfg) {
    const auto& exp = find_experiment(cfg.experiment);
    std::map<std::string, ParamValue> merged;
    for (const auto& p : exp.params) merged[p.name] = p.default_value;
    for (const auto& [k, v] : cfg.params) {
        const auto& spec = find_param(exp, k);
        if (spec.default_value.index() != v.index() &&
            !(spec.default_value.index() == 2 && v.index() == 1))
            throw UsageError("parameter '" + k + "' must be " + type_name(spec.default_value));
        merged[k] = v.index() == 1 && spec.default_value.index() == 2 ? ParamValue(double(std::get<1>(v))) : v;
    }
    return Params(std::move(merged));
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), std::size_t(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

RunManifest run(const ExperimentConfig& cfg) {
    const auto& exp = find_experiment(cfg.experiment);
    Params params = resolve_params(cfg);
    if (exp.stochastic && !cfg.seed) throw UsageError("experiment '" + exp.name + "' requires a seed");
    if (cfg.out.empty()) throw UsageError("missing output directory (--out)");
    fs::create_directories(cfg.out);

    RunContext ctx(cfg.out);
    auto start = std::chrono::steady_clock::now();
    try {
        exp.run(params, cfg.seed.value_or(0), ctx);
    } catch (const std::exception& e) {
        ctx.remove_all();
        if (dynamic_cast<const ContractError*>(&e)) throw ContractError(exp.name + ": " + e.what());
        if (dynamic_cast<const UsageError*>(&e)) throw UsageError(exp.name + ": " + e.what());
        throw NumericalFault(exp.name + ": " + e.what());
    }
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    RunManifest m;
    m.files = ctx.files();
    json files = json::array();
    for (auto& f : m.files) {
        f.sha256 = sha256_file(cfg.out / f.path);
        f.bytes = fs::file_size(cfg.out / f.path);
        files.push_back({{"path", f.path}, {"kind", f.kind}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    }
    json p = json::object();
    for (const auto& [k, v] : params.values()) p[k] = to_json(v);
    json doc = {{"toolkit", "bridgekit"},
                {"version", bridgekit::version()},
                {"experiment", exp.name},
                {"seed", cfg.seed ? json(*cfg.seed) : json(nullptr)},
                {"params", p},
                {"wall_clock_seconds", elapsed},
                {"files", files}};
    m.wall_clock_seconds = elapsed;
    m.manifest_path = (cfg.out / "manifest.json").string();
    std::ofstream out(m.manifest_path);
    out << doc.dump(2) << "\n";
    if (!out) {
        ctx.remove_all();
        throw NumericalFault("cannot write " + m.manifest_path);
    }
    return m;
}

VerifyReport verify(const fs::path& manifest_path) {
    VerifyReport r;
    std::ifstream in(manifest_path);
    if (!in) throw UsageError("manifest not found: " + manifest_path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const std::exception& e) {
        throw UsageError("manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.contains("files") || !doc["files"].is_array()) throw UsageError("manifest has no file list");
    const fs::path dir = manifest_path.parent_path();
    for (const auto& f : doc["files"]) {
        const std::string rel = f.at("path").get<std::string>();
        const fs::path p = dir / rel;
        ++r.checked;
        if (!fs::exists(p)) {
            r.problems.push_back(rel + ": missing");
            continue;
        }
        if (sha256_file(p) != f.at("sha256").get<std::string>()) {
            r.problems.push_back(rel + ": hash mismatch");
            continue;
        }
        check_invariants(p, f.value("kind", std::string("data")), r.problems);
    }
    r.ok = r.problems.empty();
    return r;
}

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Schrodinger bridge experiments", "bridgekit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(bridgekit::version()));

    auto* run_cmd = app.add_subcommand("run", "Run one experiment and write a manifest");
    std::string name, config_path, out_dir;
    std::optional<std::string> seed_text;
    std::vector<std::string> sets;
    run_cmd->add_option("experiment", name, "Experiment name (overrides the config)");
    run_cmd->add_option("--config", config_path, "TOML config file");
    run_cmd->add_option("--seed", seed_text, "Master seed");
    run_cmd->add_option("--out", out_dir, "Output directory");
    run_cmd->add_option("--set", sets, "Parameter override key=value (repeatable)");

    auto* verify_cmd = app.add_subcommand("verify", "Re-hash and check the files listed in a manifest");
    std::string manifest;
    verify_cmd->add_option("manifest", manifest, "Path to manifest.json")->required();

    auto* list_cmd = app.add_subcommand("list", "List experiments");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (list_cmd->parsed()) {
            for (const auto& e : experiments()) {
                out << e.name << "  " << e.summary << "\n";
                for (const auto& p : e.params)
                    out << "    " << p.name << " (" << type_name(p.default_value) << ", default "
                        << to_json(p.default_value).dump() << ")  " << p.help << "\n";
            }
            return 0;
        }
        if (verify_cmd->parsed()) {
            auto r = verify(manifest);
            for (const auto& p : r.problems) out << "FAIL " << p << "\n";
            out << (r.ok ? "PASS" : "FAIL") << " " << r.checked << " files checked\n";
            return r.ok ? 0 : 1;
        }
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (!name.empty()) {
            if (!cfg.experiment.empty() && cfg.experiment != name && !cfg.params.empty())
                throw UsageError("experiment '" + name + "' conflicts with config experiment '" + cfg.experiment + "'");
            find_experiment(name);
            cfg.experiment = name;
        }
        if (cfg.experiment.empty()) throw UsageError("no experiment given");
        if (seed_text) cfg.seed = parse_seed(*seed_text);
        if (!out_dir.empty()) cfg.out = out_dir;
        for (const auto& s : sets) apply_override(cfg, s);
        auto m = run(cfg);
        out << "wrote " << m.files.size() << " files, manifest " << m.manifest_path << "\n";
        return 0;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        err << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "numerical fault: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace bridgekit::cli
