#include "finslerlab/scene.hpp"

#include "finslerlab/binet_legendre.hpp"
#include "finslerlab/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace finslerlab {

namespace {

struct Entry {
    std::string section;  // empty at the top
    std::string key;
    std::string value;
    int line = 0;
    int column = 0;  // of the value
    std::string origin;
};

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

bool is_identifier(const std::string& s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

std::string where(const Entry& e) {
    std::string s = e.origin.empty() ? "" : e.origin + ": ";
    if (!e.section.empty()) s += "[" + e.section + "] ";
    return s + e.key + " (line " + std::to_string(e.line) + ")";
}

[[noreturn]] void fail(const Entry& e, const std::string& msg) { throw SpecError(where(e) + ": " + msg); }

[[noreturn]] void fail_section(const std::string& section, const std::string& msg) {
    throw SpecError("[" + section + "]: " + msg);
}

std::vector<Entry> lex(std::string_view text, const std::string& origin) {
    std::vector<Entry> out;
    std::string section;
    std::set<std::string> seen_sections;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (const auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
        const std::string t = trim(line);
        if (t.empty()) {
            if (end == text.size()) break;
            continue;
        }
        const std::string loc = (origin.empty() ? "" : origin + ": ") + "line " + std::to_string(line_no);
        if (t.front() == '[') {
            if (t.back() != ']') throw SpecError(loc + ": unterminated section header");
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            if (!seen_sections.insert(section).second) throw SpecError(loc + ": section [" + section + "] repeated");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw SpecError(loc + ": expected 'key = value'");
        Entry e;
        e.section = section;
        e.key = trim(line.substr(0, eq));
        if (e.key.empty()) throw SpecError(loc + ": empty key");
        std::size_t vstart = eq + 1;
        while (vstart < line.size() && std::isspace(static_cast<unsigned char>(line[vstart]))) ++vstart;
        e.value = trim(line.substr(eq + 1));
        e.line = line_no;
        e.column = static_cast<int>(vstart) + 1;
        e.origin = origin;
        out.push_back(std::move(e));
        if (end == text.size()) break;
    }
    return out;
}

// Splits at `sep` outside brackets and parentheses; returns (piece, offset).
std::vector<std::pair<std::string, int>> split_top(const std::string& s, char sep) {
    std::vector<std::pair<std::string, int>> out;
    int depth = 0;
    std::size_t start = 0;
    auto push = [&](std::size_t a, std::size_t b) {
        std::size_t lead = a;
        while (lead < b && std::isspace(static_cast<unsigned char>(s[lead]))) ++lead;
        out.emplace_back(trim(std::string_view(s).substr(a, b - a)), static_cast<int>(lead));
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '(' || c == '[') ++depth;
        if (c == ')' || c == ']') --depth;
        if (c == sep && depth == 0) {
            push(start, i);
            start = i + 1;
        }
    }
    push(start, s.size());
    return out;
}

// "word k=v k=[a, b] ..." -> (word, {k: (v, offset)})
struct Attributes {
    std::string head;
    std::vector<std::pair<std::string, std::pair<std::string, int>>> items;
};

Attributes parse_attributes(const Entry& e, bool with_head) {
    Attributes a;
    const std::string& s = e.value;
    std::size_t i = 0;
    auto skip = [&] {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    };
    skip();
    if (with_head) {
        const std::size_t b = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        a.head = s.substr(b, i - b);
        if (a.head.empty() || a.head.find('=') != std::string::npos) fail(e, "expected a kind before the attributes");
    }
    for (skip(); i < s.size(); skip()) {
        const std::size_t kb = i;
        while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
        const std::string key = s.substr(kb, i - kb);
        skip();
        if (key.empty() || i >= s.size() || s[i] != '=') fail(e, "expected 'name=value' at column " + std::to_string(e.column + static_cast<int>(kb)));
        ++i;
        skip();
        const std::size_t vb = i;
        int depth = 0;
        while (i < s.size()) {
            const char c = s[i];
            if (c == '(' || c == '[') ++depth;
            if (c == ')' || c == ']') --depth;
            if (depth == 0 && std::isspace(static_cast<unsigned char>(c))) break;
            ++i;
            if (depth == 0 && c == ']') break;
        }
        if (depth != 0) fail(e, "unbalanced brackets");
        for (const auto& it : a.items)
            if (it.first == key) fail(e, "attribute '" + key + "' repeated");
        a.items.push_back({key, {s.substr(vb, i - vb), static_cast<int>(vb)}});
    }
    return a;
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string fmt_list(const Vec& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
    return s;
}

bool parse_bool(const Entry& e) {
    if (e.value == "true") return true;
    if (e.value == "false") return false;
    fail(e, "expected true or false, got '" + e.value + "'");
}

int parse_int(const Entry& e, const std::string& text, int lo) {
    char* end = nullptr;
    const long v = std::strtol(text.c_str(), &end, 10);
    if (text.empty() || *end != '\0' || v < lo || v > 1000000) fail(e, "expected an integer >= " + std::to_string(lo) + ", got '" + text + "'");
    return static_cast<int>(v);
}

// Symbol context for expressions of a scene.
struct Symbols {
    std::map<std::string, double> constants;
    std::map<std::string, std::shared_ptr<const dsl::Expr>> norms;

    dsl::SymbolContext ctx(int x_dim, int v_dim, bool aliases = false) const {
        dsl::SymbolContext c;
        c.x_dim = x_dim;
        c.v_dim = v_dim;
        c.letter_aliases = aliases;
        c.constants = constants;
        c.norms = norms;
        return c;
    }
};

dsl::Expr compile_at(const Entry& e, const std::string& text, int offset, const dsl::SymbolContext& ctx) {
    if (trim(text).empty()) fail(e, "empty expression");
    try {
        return dsl::parse(text, ctx, e.line, e.column + offset);
    } catch (const ParseError& pe) {
        fail(e, pe.what());
    }
}

double eval_const(const Entry& e, const std::string& text, int offset, const Symbols& sym) {
    const std::string t = trim(text);
    if (t == "inf" || t == "+inf") return kInf;
    if (t == "-inf") return -kInf;
    const dsl::Expr ex = compile_at(e, text, offset, sym.ctx(0, 0));
    if (!ex.is_constant()) fail(e, "expected a constant, got '" + t + "'");
    try {
        return ex.eval<double>({}, {});
    } catch (const EvalError& err) {
        fail(e, err.what());
    }
}

Vec eval_list(const Entry& e, const std::string& text, int offset, const Symbols& sym) {
    std::string body = text;
    int off = offset;
    const std::string t = trim(text);
    if (!t.empty() && t.front() == '[') {
        if (t.back() != ']') fail(e, "unterminated list");
        const std::size_t b = text.find('[');
        body = text.substr(b + 1, text.rfind(']') - b - 1);
        off = offset + static_cast<int>(b) + 1;
    }
    if (trim(body).empty()) return Vec(0);
    const auto parts = split_top(body, ',');
    Vec v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = eval_const(e, parts[i].first, off + parts[i].second, sym);
    return v;
}

std::string canonical(const dsl::Expr& e) { return dsl::print(e.ast()); }

bool is_reserved(const std::string& s) {
    static const std::set<std::string> words = {"pi", "x", "v", "norm", "sin", "cos", "exp", "log", "sqrt", "abs", "max", "min", "inf"};
    if (words.count(s)) return true;
    if (s.size() == 1 && s[0] >= 'a' && s[0] <= 'f') return true;
    if (s.size() >= 2 && (s[0] == 'x' || s[0] == 'v') && std::all_of(s.begin() + 1, s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        return true;
    return false;
}

thread_local int g_depth = 0;

struct DepthGuard {
    DepthGuard() {
        if (++g_depth > 8) {
            g_depth = 0;
            throw SpecError("scene references nest too deeply (cycle?)");
        }
    }
    ~DepthGuard() { --g_depth; }
};

// Applies `scene = base, k = v` composition.
std::vector<Entry> compose(std::vector<Entry> entries) {
    auto it = std::find_if(entries.begin(), entries.end(), [](const Entry& e) { return e.section.empty() && e.key == "scene"; });
    if (it == entries.end()) return entries;
    const Entry head = *it;
    entries.erase(it);
    if (std::any_of(entries.begin(), entries.end(), [](const Entry& e) { return e.section.empty() && e.key == "scene"; }))
        fail(head, "repeated");
    const auto parts = split_top(head.value, ',');
    const std::string base_ref = parts[0].first;
    if (base_ref.empty()) fail(head, "missing base scene");
    std::vector<Entry> base;
    {
        DepthGuard guard;
        base = compose(lex(read_scene_text(base_ref), base_ref));
    }
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto eq = parts[i].first.find('=');
        if (eq == std::string::npos) fail(head, "expected 'name = value' override, got '" + parts[i].first + "'");
        const std::string key = trim(std::string_view(parts[i].first).substr(0, eq));
        std::string_view rest = std::string_view(parts[i].first).substr(eq + 1);
        std::size_t lead = 0;
        while (lead < rest.size() && std::isspace(static_cast<unsigned char>(rest[lead]))) ++lead;
        auto p = std::find_if(base.begin(), base.end(), [&](const Entry& e) { return e.section == "params" && e.key == key; });
        if (p == base.end()) fail(head, "scene '" + base_ref + "' has no parameter '" + key + "'");
        p->value = trim(rest);
        p->line = head.line;
        p->column = head.column + parts[i].second + static_cast<int>(eq + 1 + lead);
        p->origin = head.origin;
    }
    std::set<std::pair<std::string, std::string>> replaced;
    for (const Entry& e : entries) {
        const auto k = std::make_pair(e.section, e.key);
        if (replaced.insert(k).second)
            base.erase(std::remove_if(base.begin(), base.end(), [&](const Entry& b) { return b.section == k.first && b.key == k.second; }),
                       base.end());
    }
    for (Entry& e : entries) base.push_back(std::move(e));
    return base;
}

Symbols symbols_of(const SceneConfig& c) {
    Symbols s;
    for (const auto& [k, v] : c.params) s.constants[k] = v;
    for (const auto& n : c.norms) {
        auto ctx = s.ctx(0, n.dim);
        s.norms[n.name] = std::make_shared<const dsl::Expr>(dsl::parse(n.expr, ctx));
    }
    return s;
}

bool parse_metric_key(const std::string& key, int n, int& i, int& j) {
    if (key.size() < 3 || key[0] != 'g') return false;
    const std::string rest = key.substr(1);
    std::string a, b;
    if (const auto us = rest.find('_'); us != std::string::npos) {
        a = rest.substr(0, us);
        b = rest.substr(us + 1);
    } else if (rest.size() == 2) {
        a = rest.substr(0, 1);
        b = rest.substr(1);
    } else {
        return false;
    }
    auto num = [](const std::string& s, int& out) {
        if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) return false;
        out = std::stoi(s) - 1;
        return true;
    };
    return num(a, i) && num(b, j) && i >= 0 && j >= 0 && i < n && j < n;
}

std::string metric_key(int i, int j, int n) {
    return n < 10 ? "g" + std::to_string(i + 1) + std::to_string(j + 1) : "g" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
}

}  // namespace

const std::string* SceneConfig::experiment_value(const std::string& key) const {
    for (const auto& [k, v] : experiment)
        if (k == key) return &v;
    return nullptr;
}


SceneConfig parse_scene(std::string_view text) {
    const std::vector<Entry> entries = compose(lex(text, ""));
    static const std::vector<std::string> sections = {"", "params", "domain", "metric", "product", "norms",
                                                      "finsler", "conformal", "deck", "boundary", "experiment"};
    static const std::set<std::pair<std::string, std::string>> repeatable = {{"domain", "exclude"}, {"deck", "map"}};
    std::map<std::string, std::vector<const Entry*>> by;
    std::set<std::pair<std::string, std::string>> keys;
    for (const Entry& e : entries) {
        if (std::find(sections.begin(), sections.end(), e.section) == sections.end())
            throw SpecError((e.origin.empty() ? "" : e.origin + ": ") + "line " + std::to_string(e.line) +
                            ": unknown section [" + e.section + "]");
        const auto k = std::make_pair(e.section, e.key);
        if (!keys.insert(k).second && !repeatable.count(k)) fail(e, "repeated key");
        by[e.section].push_back(&e);
    }

    SceneConfig c;
    Symbols sym;

    const Entry* dim_entry = nullptr;
    for (const Entry* e : by[""]) {
        if (e->key == "name")
            c.name = e->value;
        else if (e->key == "dim")
            dim_entry = e;
        else
            fail(*e, "unknown key (expected name, dim or scene)");
    }

    for (const Entry* e : by["params"]) {
        if (!is_identifier(e->key) || is_reserved(e->key)) fail(*e, "invalid parameter name");
        const double v = eval_const(*e, e->value, 0, sym);
        if (!std::isfinite(v)) fail(*e, "parameter must be finite");
        c.params.emplace_back(e->key, v);
        sym.constants[e->key] = v;
    }

    for (const Entry* e : by["product"]) {
        if (e->key != "blocks") fail(*e, "unknown key (expected blocks)");
        for (const auto& part : split_top(e->value, ',')) {
            if (part.first.empty()) fail(*e, "empty block reference");
            c.blocks.push_back(part.first);
        }
        if (c.blocks.size() < 2) fail(*e, "a product needs at least two blocks");
        for (const auto& ref : c.blocks) {
            SceneConfig b;
            try {
                DepthGuard guard;
                b = parse_scene(read_scene_text(ref));
            } catch (const SpecError& err) {
                fail(*e, "block '" + ref + "': " + err.what());
            }
            if (b.metric.empty() && b.blocks.empty()) fail(*e, "block '" + ref + "' declares no metric");
            c.dim += b.dim;
        }
    }

    if (dim_entry) {
        const int d = parse_int(*dim_entry, dim_entry->value, 1);
        if (!c.blocks.empty() && d != c.dim) fail(*dim_entry, "the product blocks have total dimension " + std::to_string(c.dim));
        c.dim = d;
    }
    if (c.dim == 0) throw SpecError("missing 'dim' (required unless [product] is given)");
    const int n = c.dim;

    if (c.blocks.empty()) {
        c.lo = Vec::Constant(n, -kInf);
        c.hi = Vec::Constant(n, kInf);
    } else if (!by["domain"].empty()) {
        fail(*by["domain"].front(), "a product scene takes its domain from the blocks");
    }
    for (const Entry* e : by["domain"]) {
        if (e->key == "lo" || e->key == "hi") {
            const Vec v = eval_list(*e, e->value, 0, sym);
            if (v.size() != n) fail(*e, "expected " + std::to_string(n) + " values");
            (e->key == "lo" ? c.lo : c.hi) = v;
        } else if (e->key == "exclude") {
            SceneConfig::ExclusionSpec x;
            x.center = Vec::Zero(n);
            for (const auto& [k, val] : parse_attributes(*e, false).items) {
                if (k == "center") {
                    x.center = eval_list(*e, val.first, val.second, sym);
                    if (x.center.size() != n) fail(*e, "center needs " + std::to_string(n) + " values");
                } else if (k == "radius") {
                    x.radius = eval_const(*e, val.first, val.second, sym);
                    if (!(x.radius > 0.0) || !std::isfinite(x.radius)) fail(*e, "radius must be positive");
                } else if (k == "axes") {
                    const Vec a = eval_list(*e, val.first, val.second, sym);
                    for (double t : a) {
                        if (t != std::floor(t) || t < 1 || t > n) fail(*e, "axes are coordinate numbers 1.." + std::to_string(n));
                        x.axes.push_back(static_cast<int>(t) - 1);
                    }
                    std::sort(x.axes.begin(), x.axes.end());
                    if (std::adjacent_find(x.axes.begin(), x.axes.end()) != x.axes.end()) fail(*e, "repeated axis");
                } else {
                    fail(*e, "unknown attribute '" + k + "' (expected center, radius, axes)");
                }
            }
            c.exclusions.push_back(std::move(x));
        } else {
            fail(*e, "unknown key (expected lo, hi or exclude)");
        }
    }
    if (c.blocks.empty())
        for (int i = 0; i < n; ++i)
            if (!(c.lo[i] < c.hi[i])) fail_section("domain", "empty interval for x" + std::to_string(i + 1));

    // metric
    if (!c.blocks.empty() && !by["metric"].empty()) fail(*by["metric"].front(), "a product scene takes its metric from the blocks");
    {
        std::map<std::pair<int, int>, std::pair<const Entry*, dsl::Expr>> given;
        for (const Entry* e : by["metric"]) {
            int i = 0, j = 0;
            if (e->key == "auto_symmetrize") {
                c.auto_symmetrize = parse_bool(*e);
            } else if (parse_metric_key(e->key, n, i, j)) {
                if (given.count({i, j})) fail(*e, "entry given twice");
                given.emplace(std::make_pair(i, j), std::make_pair(e, compile_at(*e, e->value, 0, sym.ctx(n, 0))));
            } else {
                fail(*e, "unknown key (expected gIJ with 1 <= I, J <= " + std::to_string(n) + ", or auto_symmetrize)");
            }
        }
        if (!given.empty()) {
            c.metric.assign(static_cast<std::size_t>(n * n), "0");
            for (int i = 0; i < n; ++i) {
                if (!given.count({i, i})) fail_section("metric", "missing diagonal entry " + metric_key(i, i, n));
                for (int j = i; j < n; ++j) {
                    auto a = given.find({i, j});
                    auto b = given.find({j, i});
                    std::string t = "0";
                    if (a != given.end() && b != given.end() && i != j) {
                        if (dsl::structurally_equal(a->second.second.ast(), b->second.second.ast())) {
                            t = canonical(a->second.second);
                        } else if (c.auto_symmetrize) {
                            t = canonical(dsl::parse("((" + a->second.second.text() + ") + (" + b->second.second.text() + "))/2", sym.ctx(n, 0)));
                            c.warnings.push_back("[metric] " + metric_key(i, j, n) + " and " + metric_key(j, i, n) + " differ; replaced by their average");
                        } else {
                            fail(*b->second.first, "differs from " + metric_key(i, j, n) + " (set auto_symmetrize = true to average)");
                        }
                    } else if (a != given.end()) {
                        t = canonical(a->second.second);
                    } else if (b != given.end()) {
                        t = canonical(b->second.second);
                    }
                    c.metric[static_cast<std::size_t>(i * n + j)] = t;
                    c.metric[static_cast<std::size_t>(j * n + i)] = t;
                }
            }
        } else if (c.auto_symmetrize) {
            fail_section("metric", "auto_symmetrize without entries");
        }
    }

    // norms: NAME = expr, NAME.dim = k, NAME.reversible = bool
    {
        std::map<std::string, std::pair<int, bool>> attrs;
        for (const Entry* e : by["norms"]) {
            const auto dot = e->key.find('.');
            if (dot == std::string::npos) continue;
            const std::string name = e->key.substr(0, dot), attr = e->key.substr(dot + 1);
            auto& a = attrs.try_emplace(name, n, true).first->second;
            if (attr == "dim")
                a.first = parse_int(*e, e->value, 1);
            else if (attr == "reversible")
                a.second = parse_bool(*e);
            else
                fail(*e, "unknown attribute (expected NAME.dim or NAME.reversible)");
        }
        std::set<std::string> names;
        for (const Entry* e : by["norms"]) {
            if (e->key.find('.') != std::string::npos) continue;
            if (!is_identifier(e->key) || is_reserved(e->key) || sym.constants.count(e->key)) fail(*e, "invalid norm name");
            SceneConfig::NormSpec ns;
            ns.name = e->key;
            if (auto it = attrs.find(ns.name); it != attrs.end()) std::tie(ns.dim, ns.reversible) = it->second;
            else ns.dim = n;
            const dsl::Expr ex = compile_at(*e, e->value, 0, sym.ctx(0, ns.dim));
            if (ex.depends_on_x()) fail(*e, "a norm cannot depend on x");
            ns.expr = canonical(ex);
            sym.norms[ns.name] = std::make_shared<const dsl::Expr>(ex);
            names.insert(ns.name);
            c.norms.push_back(std::move(ns));
        }
        for (const Entry* e : by["norms"]) {
            const auto dot = e->key.find('.');
            if (dot != std::string::npos && !names.count(e->key.substr(0, dot))) fail(*e, "attribute of an undefined norm");
        }
    }

    for (const Entry* e : by["finsler"]) {
        if (e->key == "norm") {
            c.finsler = canonical(compile_at(*e, e->value, 0, sym.ctx(n, n)));
        } else if (e->key == "block_norm") {
            if (c.blocks.empty()) fail(*e, "block_norm needs a [product] section");
            const dsl::Expr ex = compile_at(*e, e->value, 0, sym.ctx(0, static_cast<int>(c.blocks.size()), true));
            c.block_norm = canonical(ex);
        } else if (e->key == "reversible") {
            c.reversible = parse_bool(*e);
        } else {
            fail(*e, "unknown key (expected norm, block_norm or reversible)");
        }
    }
    if (!c.finsler.empty() && !c.block_norm.empty()) fail_section("finsler", "give either norm or block_norm");

    for (const Entry* e : by["conformal"]) {
        if (e->key != "factor") fail(*e, "unknown key (expected factor)");
        c.conformal = canonical(compile_at(*e, e->value, 0, sym.ctx(n, 0)));
    }

    for (const Entry* e : by["deck"]) {
        if (e->key != "map") fail(*e, "unknown key (expected map)");
        const Attributes a = parse_attributes(*e, true);
        SceneConfig::DeckSpec d;
        d.kind = a.head;
        if (d.kind == "scale") {
            bool have_q = false;
            for (const auto& [k, val] : a.items) {
                if (k != "q") fail(*e, "unknown attribute '" + k + "' (scale takes q)");
                d.q = eval_const(*e, val.first, val.second, sym);
                have_q = true;
            }
            if (!have_q || !(d.q > 0.0) || !std::isfinite(d.q)) fail(*e, "scale needs q > 0");
            d.coefficient = d.q;
        } else if (d.kind == "affine") {
            d.matrix = Mat::Identity(n, n);
            d.shift = Vec::Zero(n);
            bool have_c = false;
            for (const auto& [k, val] : a.items) {
                if (k == "matrix") {
                    const Vec m = eval_list(*e, val.first, val.second, sym);
                    if (m.size() != n * n) fail(*e, "matrix needs " + std::to_string(n * n) + " values (row-major)");
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) d.matrix(i, j) = m[i * n + j];
                } else if (k == "shift") {
                    d.shift = eval_list(*e, val.first, val.second, sym);
                    if (d.shift.size() != n) fail(*e, "shift needs " + std::to_string(n) + " values");
                } else if (k == "coefficient") {
                    d.coefficient = eval_const(*e, val.first, val.second, sym);
                    have_c = true;
                } else {
                    fail(*e, "unknown attribute '" + k + "' (affine takes matrix, shift, coefficient)");
                }
            }
            if (!have_c || !(d.coefficient > 0.0)) fail(*e, "affine needs coefficient > 0");
            if (std::fabs(d.matrix.determinant()) < 1e-300) fail(*e, "matrix is singular");
        } else {
            fail(*e, "unknown map kind '" + d.kind + "' (expected scale or affine)");
        }
        c.decks.push_back(std::move(d));
    }

    {
        std::string mode;
        for (const Entry* e : by["boundary"]) {
            if (e->key == "d_infty")
                c.d_infty = canonical(compile_at(*e, e->value, 0, sym.ctx(n, 0)));
            else if (e->key == "mode") {
                mode = e->value;
                if (mode != "closed" && mode != "shooting") fail(*e, "expected closed or shooting");
            } else if (e->key == "directions")
                c.directions = parse_int(*e, e->value, 1);
            else if (e->key == "horizon") {
                c.horizon = eval_const(*e, e->value, 0, sym);
                if (!(c.horizon > 0.0) || !std::isfinite(c.horizon)) fail(*e, "horizon must be positive");
            } else
                fail(*e, "unknown key (expected d_infty, mode, directions or horizon)");
        }
        if (mode == "closed" && c.d_infty.empty()) fail_section("boundary", "mode = closed needs d_infty");
        if (mode == "shooting" && !c.d_infty.empty()) fail_section("boundary", "mode = shooting conflicts with d_infty");
    }

    for (const Entry* e : by["experiment"]) {
        if (!is_identifier(e->key)) fail(*e, "invalid key");
        c.experiment.emplace_back(e->key, e->value);
    }

    if (c.metric.empty() && c.blocks.empty() && c.finsler.empty())
        throw SpecError("a scene needs [metric], [product] or a [finsler] norm");
    if (c.metric.empty() && c.blocks.empty() && !c.conformal.empty() && c.finsler.empty())
        throw SpecError("[conformal] needs a Finsler field");
    return c;
}

std::string print_scene(const SceneConfig& c) {
    const int n = c.dim;
    std::ostringstream o;
    if (!c.name.empty()) o << "name = " << c.name << "\n";
    o << "dim = " << n << "\n";
    if (!c.params.empty()) {
        o << "\n[params]\n";
        for (const auto& [k, v] : c.params) o << k << " = " << fmt(v) << "\n";
    }
    if (c.blocks.empty()) {
        const bool bounded = (c.lo.array().isFinite() || c.hi.array().isFinite()).any();
        if (bounded || !c.exclusions.empty()) {
            o << "\n[domain]\n";
            if (bounded) o << "lo = " << fmt_list(c.lo) << "\nhi = " << fmt_list(c.hi) << "\n";
            for (const auto& x : c.exclusions) {
                o << "exclude = center=[" << fmt_list(x.center) << "] radius=" << fmt(x.radius);
                if (!x.axes.empty()) {
                    o << " axes=[";
                    for (std::size_t i = 0; i < x.axes.size(); ++i) o << (i ? ", " : "") << x.axes[i] + 1;
                    o << "]";
                }
                o << "\n";
            }
        }
    }
    if (!c.metric.empty()) {
        o << "\n[metric]\n";
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) o << metric_key(i, j, n) << " = " << c.metric[static_cast<std::size_t>(i * n + j)] << "\n";
    }
    if (!c.blocks.empty()) {
        o << "\n[product]\nblocks = ";
        for (std::size_t i = 0; i < c.blocks.size(); ++i) o << (i ? ", " : "") << c.blocks[i];
        o << "\n";
    }
    if (!c.norms.empty()) {
        o << "\n[norms]\n";
        for (const auto& ns : c.norms) {
            o << ns.name << " = " << ns.expr << "\n";
            if (ns.dim != n) o << ns.name << ".dim = " << ns.dim << "\n";
            if (!ns.reversible) o << ns.name << ".reversible = false\n";
        }
    }
    if (!c.finsler.empty() || !c.block_norm.empty()) {
        o << "\n[finsler]\n";
        if (!c.finsler.empty()) o << "norm = " << c.finsler << "\n";
        if (!c.block_norm.empty()) o << "block_norm = " << c.block_norm << "\n";
        if (!c.reversible) o << "reversible = false\n";
    }
    if (!c.conformal.empty()) o << "\n[conformal]\nfactor = " << c.conformal << "\n";
    if (!c.decks.empty()) {
        o << "\n[deck]\n";
        for (const auto& d : c.decks) {
            if (d.kind == "scale") {
                o << "map = scale q=" << fmt(d.q) << "\n";
            } else {
                Vec m(n * n);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) m[i * n + j] = d.matrix(i, j);
                o << "map = affine matrix=[" << fmt_list(m) << "] shift=[" << fmt_list(d.shift) << "] coefficient=" << fmt(d.coefficient) << "\n";
            }
        }
    }
    o << "\n[boundary]\n";
    if (!c.d_infty.empty())
        o << "d_infty = " << c.d_infty << "\n";
    else
        o << "mode = shooting\ndirections = " << c.directions << "\nhorizon = " << fmt(c.horizon) << "\n";
    if (!c.experiment.empty()) {
        o << "\n[experiment]\n";
        for (const auto& [k, v] : c.experiment) o << k << " = " << v << "\n";
    }
    return o.str();
}

Scene assemble_scene(const SceneConfig& c) {
    const int n = c.dim;
    const Symbols sym = symbols_of(c);
    Scene s;
    s.config = c;
    if (!c.blocks.empty()) {
        std::vector<MetricPtr> factors;
        for (const auto& ref : c.blocks) {
            DepthGuard guard;
            factors.push_back(resolve_scene(ref).metric);
        }
        s.product = std::make_shared<const ProductStructure>(std::move(factors));
        s.metric = s.product->metric();
        s.metric_declared = true;
        s.domain = s.metric->domain();
    } else {
        s.domain = Domain(n);
        s.domain.lo = c.lo;
        s.domain.hi = c.hi;
        for (const auto& x : c.exclusions) s.domain.exclusions.push_back({x.center, x.radius, x.axes});
        if (!c.metric.empty()) {
            std::vector<dsl::Expr> es;
            for (const auto& t : c.metric) es.push_back(dsl::parse(t, sym.ctx(n, 0)));
            s.metric = std::make_shared<DslMetric>(std::move(es), s.domain);
            s.metric_declared = true;
        }
    }

    if (!c.finsler.empty()) {
        s.finsler = std::make_shared<DslFinsler>(dsl::parse(c.finsler, sym.ctx(n, n)), s.domain, c.reversible);
    } else if (!c.block_norm.empty()) {
        auto norm = std::make_shared<DslNorm>(dsl::parse(c.block_norm, sym.ctx(0, static_cast<int>(c.blocks.size()), true)), c.reversible);
        s.finsler = product_finsler(s.product, norm);
    } else {
        s.finsler = std::make_shared<RiemannFinsler>(s.metric);
    }
    if (!c.conformal.empty()) s.finsler = conformal_scale(s.finsler, std::make_shared<DslScalar>(dsl::parse(c.conformal, sym.ctx(n, 0))));
    if (!s.metric) s.metric = bl_field(s.finsler);

    for (const auto& d : c.decks) {
        if (d.kind == "scale")
            s.decks.push_back(DeckMap::scale(n, d.q));
        else
            s.decks.push_back(DeckMap::affine(d.matrix, d.shift, d.coefficient));
    }

    if (!c.d_infty.empty()) {
        s.boundary = BoundaryProfile::closed_form(std::make_shared<DslScalar>(dsl::parse(c.d_infty, sym.ctx(n, 0))));
    } else {
        ShootingOptions opt;
        opt.directions = c.directions;
        opt.horizon = c.horizon;
        s.boundary = BoundaryProfile::shooting(s.metric, opt);
    }
    return s;
}

Scene load_scene(std::string_view text) { return assemble_scene(parse_scene(text)); }

std::string read_scene_text(const std::string& ref) {
    const std::string r = trim(ref);
    if (r.find(',') != std::string::npos) return "scene = " + r + "\n";
    const auto names = catalog_names();
    if (std::find(names.begin(), names.end(), r) != names.end()) return catalog_text(r);
    std::ifstream in(r);
    if (!in) throw SpecError("unknown scene '" + r + "' (not a catalog name or readable file)");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Scene resolve_scene(const std::string& ref) { return load_scene(read_scene_text(ref)); }

}  // namespace finslerlab
