#pragma once

#include <map>
#include <string>
#include <vector>

#include "zeggs/errors.hpp"

namespace zeggs::style_space {

struct EmbeddingRow {
    std::string id;
    std::string label;
    std::vector<double> mu;
};

// Embedding store (CSV: id, label, values). Clip ids are unique.
struct EmbeddingSet {
    std::vector<EmbeddingRow> rows;

    int dim() const { return rows.empty() ? 0 : int(rows[0].mu.size()); }
    void add(EmbeddingRow row);
    const EmbeddingRow* find(const std::string& id) const;

    void save_csv(const std::string& path) const;
    static EmbeddingSet load_csv(const std::string& path);
};

// Weighted sum; weights must sum to one within 1e-6.
std::vector<double> blend(const std::vector<std::vector<double>>& embeddings,
                          const std::vector<double>& weights);

struct StyleProjectionStats {
    std::vector<double> mean;   // per component
    std::vector<double> stdev;  // per component
};

struct PcaModel {
    std::vector<double> mean;                  // [D]
    std::vector<std::vector<double>> components;  // k rows, each [D], orthonormal
    std::vector<double> explained_variance;    // nonincreasing
    std::map<std::string, StyleProjectionStats> style_stats;

    int k() const { return int(components.size()); }
    int dim() const { return int(mean.size()); }
    std::vector<double> project(const std::vector<double>& e) const;
    std::vector<double> reconstruct(const std::vector<double>& coords) const;

    std::string to_json() const;
    static PcaModel from_json(const std::string& text);
    void save_json(const std::string& path) const;
    static PcaModel load_json(const std::string& path);
};

// Mean-centered eigendecomposition of the covariance with a deterministic
// sign convention (largest-magnitude element of each component positive).
PcaModel pca_fit(const EmbeddingSet& set, int k);

// Projects e, shifts coordinate `component` by delta_std standard deviations
// of the named style's projections, and reconstructs.
std::vector<double> pca_edit(const std::vector<double>& e, const PcaModel& model, int component,
                             double delta_std, const std::string& style);

// "id,label,pc1,pc2" rows for external plotting.
std::string scatter_csv(const EmbeddingSet& set, const PcaModel& model);

}  // namespace zeggs::style_space
