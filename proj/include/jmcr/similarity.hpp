#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "jmcr/errors.hpp"

namespace jmcr {

enum class TraitKind { Quantitative, Qualitative };

// One auxiliary predictor observed per response: either a real value or a
// categorical label for each of the p responses.
struct TraitColumn {
    TraitKind kind = TraitKind::Quantitative;
    std::string name;
    std::vector<double> values;       // used when quantitative
    std::vector<std::string> labels;  // used when qualitative

    int size() const {
        return static_cast<int>(kind == TraitKind::Quantitative ? values.size() : labels.size());
    }
};

struct SimilarityBasis {
    std::vector<Eigen::MatrixXd> mats;
    std::vector<std::string> labels;

    int K() const { return static_cast<int>(mats.size()); }
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

// Gaussian kernel on a real-valued trait: w_{j1 j2} = exp(-(z_{j1} - z_{j2})^2),
// zero diagonal.
inline Eigen::MatrixXd build_quantitative(const std::vector<double>& values) {
    const int p = static_cast<int>(values.size());
    for (double v : values)
        if (!std::isfinite(v))
            throw InvalidInputError("build_quantitative: non-finite trait value");
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(p, p);
    for (int a = 0; a < p; ++a) {
        for (int b = a + 1; b < p; ++b) {
            const double diff = values[a] - values[b];
            const double w = std::exp(-diff * diff);
            W(a, b) = w;
            W(b, a) = w;
        }
    }
    return W;
}

// Match kernel on a categorical trait: 1 when the two responses share the
// level, 0 otherwise; zero diagonal for identifiability.
inline Eigen::MatrixXd build_qualitative(const std::vector<std::string>& labels) {
    const int p = static_cast<int>(labels.size());
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(p, p);
    for (int a = 0; a < p; ++a) {
        for (int b = a + 1; b < p; ++b) {
            const double w = labels[a] == labels[b] ? 1.0 : 0.0;
            W(a, b) = w;
            W(b, a) = w;
        }
    }
    return W;
}

// Center and scale to unit variance. Constant columns come back all-zero
// rather than dividing by zero.
inline std::vector<double> standardize_values(const std::vector<double>& values) {
    const int p = static_cast<int>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= p;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / std::max(p - 1, 1));
    std::vector<double> out(values.size());
    for (int j = 0; j < p; ++j) out[j] = sd > 0.0 ? (values[j] - mean) / sd : 0.0;
    return out;
}

// Quantitative traits are standardized before the kernel by default; the
// kernel is scale sensitive, so the toggle is explicit.
inline Eigen::MatrixXd build_from_trait(const TraitColumn& trait, bool standardize = true) {
    if (trait.kind == TraitKind::Quantitative) {
        return build_quantitative(standardize ? standardize_values(trait.values) : trait.values);
    }
    return build_qualitative(trait.labels);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

struct BasisViolation {
    int matrix_index = 0;  // 0-based index into the basis
    int row = 0;
    int col = 0;
    std::string what;
};

// Structural checks every usable basis must pass: symmetry, zero diagonal,
// finite entries. Returns the full violation list and never throws.
inline std::vector<BasisViolation> validate_basis(const SimilarityBasis& basis) {
    std::vector<BasisViolation> report;
    for (int k = 0; k < basis.K(); ++k) {
        const Eigen::MatrixXd& W = basis.mats[k];
        const int p = static_cast<int>(W.rows());
        if (W.cols() != p) {
            report.push_back({k, 0, 0, "matrix is not square"});
            continue;
        }
        for (int a = 0; a < p; ++a) {
            if (W(a, a) != 0.0)
                report.push_back({k, a, a, "nonzero diagonal at (" + std::to_string(a + 1) + "," +
                                               std::to_string(a + 1) + ")"});
            for (int b = 0; b < p; ++b) {
                if (!std::isfinite(W(a, b))) {
                    report.push_back({k, a, b, "non-finite entry at (" + std::to_string(a + 1) +
                                                   "," + std::to_string(b + 1) + ")"});
                } else if (b > a && W(a, b) != W(b, a)) {
                    report.push_back({k, a, b, "asymmetry at (" + std::to_string(a + 1) + "," +
                                                   std::to_string(b + 1) + ")"});
                }
            }
        }
    }
    return report;
}

} // namespace jmcr
