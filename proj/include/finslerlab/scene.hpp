#pragma once

#include "finslerlab/boundary.hpp"
#include "finslerlab/norms.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace finslerlab {

// Typed content of a scene file. Expressions are kept in canonical printed
// form; parameters are numbers usable as constants in every expression.
struct SceneConfig {
    struct ExclusionSpec {
        Vec center;
        double radius = 1e-8;
        std::vector<int> axes;  // zero-based
    };
    struct NormSpec {
        std::string name;
        std::string expr;
        int dim = 0;
        bool reversible = true;
    };
    struct DeckSpec {
        std::string kind;  // "scale" or "affine"
        double q = 1.0;
        Mat matrix;
        Vec shift;
        double coefficient = 1.0;
    };

    std::string name;
    int dim = 0;
    std::vector<std::pair<std::string, double>> params;

    Vec lo;
    Vec hi;
    std::vector<ExclusionSpec> exclusions;

    std::vector<std::string> metric;  // dim*dim row-major, empty when absent
    bool auto_symmetrize = false;
    std::vector<std::string> blocks;  // product factors (scene references)

    std::vector<NormSpec> norms;
    std::string finsler;     // expression in x and v
    std::string block_norm;  // N(a, b, ...) over the product blocks
    bool reversible = true;
    std::string conformal;   // factor multiplying F

    std::vector<DeckSpec> decks;

    std::string d_infty;  // closed form; shooting when empty
    int directions = 64;
    double horizon = 10.0;

    std::vector<std::pair<std::string, std::string>> experiment;
    std::vector<std::string> warnings;

    const std::string* experiment_value(const std::string& key) const;
};

// Parses scene text. `scene = NAME, k = v, ...` at the top starts from a
// catalog scene (or file) with parameter overrides; keys given afterwards
// replace the inherited ones. Errors name the section, key and line.
SceneConfig parse_scene(std::string_view text);
// Canonical text; parse_scene(print_scene(c)) reproduces c.
std::string print_scene(const SceneConfig& c);

struct Scene {
    SceneConfig config;
    Domain domain;
    MetricPtr metric;             // declared, product, or the BL metric of F
    bool metric_declared = false;
    FinslerPtr finsler;           // Riemannian norm of the metric when none is declared
    std::shared_ptr<const ProductStructure> product;
    std::vector<DeckMap> decks;
    BoundaryProfile boundary;     // closed form, else shooting in the metric

    int dim() const { return config.dim; }
};

Scene assemble_scene(const SceneConfig& c);
Scene load_scene(std::string_view text);
// Catalog name, catalog name with overrides ("hopf-ell4, q = 3"), or a path
// to a .scene file.
Scene resolve_scene(const std::string& ref);
std::string read_scene_text(const std::string& ref);

std::vector<std::string> catalog_names();
// Throws SpecError for an unknown name.
const std::string& catalog_text(const std::string& name);

}  // namespace finslerlab
