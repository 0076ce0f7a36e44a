#include "finslerlab/error.hpp"
#include "finslerlab/scene.hpp"

#include <map>

namespace finslerlab {

namespace {

const std::map<std::string, std::string>& catalog() {
    static const std::map<std::string, std::string> c = {
        {"euclidean", R"(name = euclidean
dim = 2

[metric]
g11 = 1
g22 = 1
)"},
        {"flat3d", R"(name = flat3d
dim = 3

[metric]
g11 = 1
g22 = 1
g33 = 1
)"},
        {"line", R"(name = line
dim = 1

[metric]
g11 = 1
)"},
        {"punctured-plane", R"(name = punctured-plane
dim = 2

[params]
q = 2

[domain]
exclude = center=[0, 0] radius=1e-8

[metric]
g11 = 1
g22 = 1

[deck]
map = scale q=q

[boundary]
d_infty = norm(x)

[experiment]
point = 1, 0.5
)"},
        {"sphere-chart", R"(name = sphere-chart
dim = 2

# polar angle x1, longitude x2
[domain]
lo = 0, -inf
hi = pi, inf

[metric]
g11 = 1
g22 = sin(x1)^2

[experiment]
point = 1.2, 0.3
)"},
        {"sphere-chart-r2", R"(name = sphere-chart-r2
dim = 2

[params]
r = 2

[domain]
lo = 0, -inf
hi = pi, inf

[metric]
g11 = r^2
g22 = r^2*sin(x1)^2
)"},
        {"sphere3-chart", R"(name = sphere3-chart
dim = 3

[domain]
lo = 0, 0, -inf
hi = pi, pi, inf

[metric]
g11 = 1
g22 = sin(x1)^2
g33 = sin(x1)^2*sin(x2)^2

[experiment]
point = 1.5707963267948966, 1.5707963267948966, 0
)"},
        {"sphere-x-line", R"(name = sphere-x-line

[product]
blocks = sphere-chart, line

[experiment]
point = 1.2, 0.3, 0.5
)"},
        {"sphere-x-line-ell4", R"(name = sphere-x-line-ell4

[product]
blocks = sphere-chart, line

[finsler]
block_norm = (a^4 + b^4)^(1/4)

[experiment]
point = 1.2, 0.3, 0.5
)"},
        {"sphere-x-line-ell4-conf", R"(name = sphere-x-line-ell4-conf

[product]
blocks = sphere-chart, line

[finsler]
block_norm = (a^4 + b^4)^(1/4)

[conformal]
factor = exp(x3)

[experiment]
point = 1.2, 0.3, 0.5
)"},
        {"sphere-x-sphere", R"(name = sphere-x-sphere

[product]
blocks = sphere-chart, sphere-chart-r2

[experiment]
point = 1.2, 0.3, 1.4, -0.2
)"},
        {"hopf-ell4", R"(name = hopf-ell4
dim = 2

[params]
q = 2

[domain]
exclude = center=[0, 0] radius=1e-8

[metric]
g11 = 1
g22 = 1

[norms]
F0 = (v1^4 + v2^4)^(1/4)

[finsler]
norm = F0(v)/norm(x)

[deck]
map = scale q=q

[boundary]
d_infty = norm(x)

[experiment]
point = 1, 0.5
)"},
        {"randers", R"(name = randers
dim = 2

[finsler]
norm = sqrt(v1^2 + v2^2) + 0.5*v1
reversible = false

[experiment]
point = 0, 0
)"},
        {"linf2d", R"(name = linf2d
dim = 2

[finsler]
norm = max(abs(v1), abs(v2))

[experiment]
point = 0, 0
)"},
        {"l1-2d", R"(name = l1-2d
dim = 2

[finsler]
norm = abs(v1) + abs(v2)

[experiment]
point = 0, 0
)"},
        {"bumped-punctured-plane", R"(name = bumped-punctured-plane
dim = 2

# conformally flat, curvature -2/(1+r^2)^3
[domain]
exclude = center=[0, 0] radius=1e-8

[metric]
g11 = 1 + x1^2 + x2^2
g22 = 1 + x1^2 + x2^2

[boundary]
d_infty = (norm(x)*sqrt(1 + norm(x)^2) + log(norm(x) + sqrt(1 + norm(x)^2)))/2

[experiment]
point = 0.6, 0.2
)"},
        {"line-x-punctured-plane", R"(name = line-x-punctured-plane

[product]
blocks = line, punctured-plane

[boundary]
d_infty = sqrt(x2^2 + x3^2)

[experiment]
point = 0, 1, 0.5
)"},
        {"line-x-bumped-punctured", R"(name = line-x-bumped-punctured

[product]
blocks = line, bumped-punctured-plane

[boundary]
d_infty = (sqrt(x2^2 + x3^2)*sqrt(1 + x2^2 + x3^2) + log(sqrt(x2^2 + x3^2) + sqrt(1 + x2^2 + x3^2)))/2

[experiment]
point = 0, 0.6, 0.2
)"},
    };
    return c;
}

}  // namespace

std::vector<std::string> catalog_names() {
    std::vector<std::string> out;
    for (const auto& [k, v] : catalog()) out.push_back(k);
    return out;
}

const std::string& catalog_text(const std::string& name) {
    const auto& c = catalog();
    auto it = c.find(name);
    if (it == c.end()) throw SpecError("unknown catalog scene '" + name + "'");
    return it->second;
}

}  // namespace finslerlab
