// SPDX-License-Identifier: Apache-2.0
#include "akt/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace akt::cli {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
    throw UsageError("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

// Drops a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && quoted) {
            ++i;
        } else if (line[i] == '"') {
            quoted = !quoted;
        } else if (line[i] == '#' && !quoted) {
            return line.substr(0, i);
        }
    }
    return line;
}

class ValueParser {
public:
    ValueParser(const std::string& s, std::size_t line) : s_(s), line_(line) {}

    ConfigValue parse() {
        ConfigValue v;
        v.line = line_;
        skip_ws();
        if (peek() == '[') {
            ++pos_;
            std::vector<ConfigValue::Scalar> items;
            skip_ws();
            if (peek() == ']') {
                ++pos_;
            } else {
                while (true) {
                    items.push_back(scalar());
                    skip_ws();
                    if (peek() == ',') {
                        ++pos_;
                        skip_ws();
                        if (peek() == ']') {
                            ++pos_;
                            break;
                        }
                        continue;
                    }
                    if (peek() == ']') {
                        ++pos_;
                        break;
                    }
                    fail(line_, "expected ',' or ']' in array");
                }
            }
            v.value = std::move(items);
        } else {
            v.value = scalar();
        }
        skip_ws();
        if (pos_ != s_.size()) fail(line_, "unexpected trailing characters '" + s_.substr(pos_) + "'");
        return v;
    }

private:
    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    ConfigValue::Scalar scalar() {
        skip_ws();
        if (peek() == '"') return quoted();
        std::size_t end = pos_;
        while (end < s_.size() && s_[end] != ',' && s_[end] != ']' && !std::isspace(static_cast<unsigned char>(s_[end])))
            ++end;
        const std::string tok = s_.substr(pos_, end - pos_);
        pos_ = end;
        if (tok == "true") return true;
        if (tok == "false") return false;
        if (tok.empty()) fail(line_, "missing value");
        std::string clean;
        for (char c : tok)
            if (c != '_') clean += c;
        std::size_t used = 0;
        double d = 0.0;
        try {
            d = std::stod(clean, &used);
        } catch (const std::exception&) {
            fail(line_, "cannot parse value '" + tok + "' (strings need double quotes)");
        }
        if (used != clean.size() || !std::isfinite(d)) fail(line_, "cannot parse number '" + tok + "'");
        return d;
    }

    std::string quoted() {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) break;
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: fail(line_, std::string("unknown escape \\") + e);
                }
            }
            out += c;
        }
        if (peek() != '"') fail(line_, "unterminated string");
        ++pos_;
        return out;
    }

    const std::string& s_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

const ConfigValue::Scalar& as_scalar(const ConfigValue& v, const std::string& key) {
    if (const auto* s = std::get_if<ConfigValue::Scalar>(&v.value)) return *s;
    fail(v.line, "'" + key + "' must be a single value, not an array");
}

}  // namespace

ConfigDoc ConfigDoc::parse(const std::string& text) {
    ConfigDoc doc;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_name(section)) fail(line_no, "invalid section name '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (!valid_name(key)) fail(line_no, "invalid key '" + key + "'");
        const std::string full = section.empty() ? key : section + "." + key;
        if (doc.entries_.count(full)) fail(line_no, "duplicate key '" + full + "'");
        doc.entries_.emplace(full, ValueParser(line.substr(eq + 1), line_no).parse());
    }
    return doc;
}

ConfigDoc ConfigDoc::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

double ConfigDoc::number(const std::string& key) const {
    const auto& v = entries_.at(key);
    const auto& s = as_scalar(v, key);
    if (const auto* d = std::get_if<double>(&s)) return *d;
    fail(v.line, "'" + key + "' must be a number");
}

std::uint64_t ConfigDoc::integer(const std::string& key) const {
    const double d = number(key);
    if (d < 0 || d != std::floor(d) || d > 9007199254740992.0) {
        fail(entries_.at(key).line, "'" + key + "' must be a non-negative integer");
    }
    return static_cast<std::uint64_t>(d);
}

bool ConfigDoc::boolean(const std::string& key) const {
    const auto& v = entries_.at(key);
    const auto& s = as_scalar(v, key);
    if (const auto* b = std::get_if<bool>(&s)) return *b;
    fail(v.line, "'" + key + "' must be true or false");
}

std::string ConfigDoc::string(const std::string& key) const {
    const auto& v = entries_.at(key);
    const auto& s = as_scalar(v, key);
    if (const auto* str = std::get_if<std::string>(&s)) return *str;
    fail(v.line, "'" + key + "' must be a quoted string");
}

std::vector<double> ConfigDoc::numbers(const std::string& key) const {
    const auto& v = entries_.at(key);
    const auto* arr = std::get_if<std::vector<ConfigValue::Scalar>>(&v.value);
    if (!arr) fail(v.line, "'" + key + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& s : *arr) {
        const auto* d = std::get_if<double>(&s);
        if (!d) fail(v.line, "'" + key + "' must contain numbers only");
        out.push_back(*d);
    }
    return out;
}

// ---------------------------------------------------------------- RunConfig

void RunConfig::validate() const {
    exp.validate();
    corpus::validate(synthetic);
    if (max_steps < 2) throw UsageError("data.max_steps must be >= 2");
    if (exp.max_len < 1) throw UsageError("data.max_len must be >= 1");
    if (exp.ae.embed_dim < 2 || exp.ae.embed_dim % 2) throw UsageError("autoencoder.embed_dim must be even and >= 2");
    if (exp.ae.epochs > 0 && !(exp.ae.lr > 0.0)) throw UsageError("autoencoder.lr must be > 0");
    if (!(exp.finetune.lr > 0.0)) throw UsageError("finetune.lr must be > 0");
    for (double l : lambda_sweep)
        if (!(l >= 0.0 && l <= 1.0)) throw UsageError("sweep.lambda values must lie in [0, 1]");
    for (double g : gamma_sweep)
        if (!(g >= 0.0 && g <= 1.0)) throw UsageError("sweep.gamma values must lie in [0, 1]");
}

void RunConfig::set_seed(std::uint64_t seed) {
    exp.seed = seed;
    synthetic.seed = seed;
}

RunConfig run_config_from(const ConfigDoc& doc) {
    RunConfig c;
    auto& e = c.exp;
    using Setter = std::function<void(const std::string&)>;
    auto count = [&](std::size_t& dst) { return Setter([&](const std::string& k) { dst = doc.integer(k); }); };
    auto real = [&](double& dst) { return Setter([&](const std::string& k) { dst = doc.number(k); }); };
    auto flag = [&](bool& dst) { return Setter([&](const std::string& k) { dst = doc.boolean(k); }); };
    auto file = [&](std::string& dst) { return Setter([&](const std::string& k) { dst = doc.string(k); }); };

    std::uint64_t seed = c.exp.seed;
    bool synthetic_seed_set = false;
    const std::map<std::string, Setter> setters = {
        {"run.seed", [&](const std::string& k) { seed = doc.integer(k); }},
        {"run.variant", [&](const std::string& k) { e.variant = kt::parse_variant(doc.string(k)); }},
        {"run.out", file(c.out)},
        {"data.source_bank", file(c.data.source_bank)},
        {"data.source_interactions", file(c.data.source_interactions)},
        {"data.target_bank", file(c.data.target_bank)},
        {"data.target_interactions", file(c.data.target_interactions)},
        {"data.embeddings", file(e.embeddings)},
        {"data.max_len", count(e.max_len)},
        {"data.max_steps", count(c.max_steps)},
        {"data.min_count", count(c.min_count)},
        {"synthetic.concepts", count(c.synthetic.concepts)},
        {"synthetic.questions", count(c.synthetic.questions)},
        {"synthetic.students", count(c.synthetic.students)},
        {"synthetic.length", count(c.synthetic.length)},
        {"synthetic.guess", real(c.synthetic.guess)},
        {"synthetic.slip", real(c.synthetic.slip)},
        {"synthetic.shift", real(c.synthetic.shift)},
        {"synthetic.seed",
         [&](const std::string& k) {
             c.synthetic.seed = doc.integer(k);
             synthetic_seed_set = true;
         }},
        {"autoencoder.embed_dim", count(e.ae.embed_dim)},
        {"autoencoder.lr", real(e.ae.lr)},
        {"autoencoder.batch", count(e.ae.batch)},
        {"autoencoder.epochs", count(e.ae.epochs)},
        {"model.d_q", count(e.model.d_q)},
        {"model.d_h", count(e.model.d_h)},
        {"model.d_a", count(e.model.d_a)},
        {"train.epochs", count(e.train.epochs)},
        {"train.lr", real(e.train.lr)},
        {"train.batch", count(e.train.batch)},
        {"adapt.gamma", real(e.train.gamma)},
        {"adapt.lambda", real(e.train.lambda)},
        {"adapt.kernel", [&](const std::string& k) { e.train.kernel.kind = adapt::parse_kernel(doc.string(k)); }},
        {"adapt.bandwidth", real(e.train.kernel.bandwidth)},
        {"adapt.mmd_cap", count(e.train.mmd_cap)},
        {"adapt.mmd_lr", real(e.train.mmd_lr)},
        {"adapt.mask_loss_only", flag(e.train.mask_loss_only)},
        {"finetune.epochs", count(e.finetune.epochs)},
        {"finetune.lr", real(e.finetune.lr)},
        {"finetune.batch", count(e.finetune.batch)},
        {"finetune.unfreeze", flag(e.finetune.unfreeze)},
        {"eval.folds", count(e.folds)},
        {"eval.labeled_fraction", real(e.labeled_fraction)},
        {"eval.unlabeled_fraction", real(e.unlabeled_fraction)},
        {"sweep.lambda", [&](const std::string& k) { c.lambda_sweep = doc.numbers(k); }},
        {"sweep.gamma", [&](const std::string& k) { c.gamma_sweep = doc.numbers(k); }},
    };
    for (const auto& [key, value] : doc.entries()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw UsageError("config line " + std::to_string(value.line) + ": unknown key '" + key + "'");
        it->second(key);
    }
    const std::uint64_t synthetic_seed = c.synthetic.seed;
    c.set_seed(seed);
    if (synthetic_seed_set) c.synthetic.seed = synthetic_seed;
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from(ConfigDoc::load(path));
}

}  // namespace akt::cli
