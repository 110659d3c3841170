#include "zeggs/style_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

namespace zeggs::style_space {

using nlohmann::json;

void EmbeddingSet::add(EmbeddingRow row) {
    if (find(row.id)) fail(Errc::state, "duplicate clip id in embedding set: " + row.id);
    if (!rows.empty() && rows[0].mu.size() != row.mu.size())
        fail(Errc::shape, "embedding width mismatch for " + row.id);
    rows.push_back(std::move(row));
}

const EmbeddingRow* EmbeddingSet::find(const std::string& id) const {
    for (const auto& r : rows)
        if (r.id == id) return &r;
    return nullptr;
}

void EmbeddingSet::save_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) fail(Errc::io, "cannot write embeddings CSV: " + path);
    os << "id,label";
    for (int i = 0; i < dim(); ++i) os << ",v" << i;
    os << "\n";
    char buf[32];
    for (const auto& r : rows) {
        os << r.id << "," << r.label;
        for (double v : r.mu) {
            std::snprintf(buf, sizeof(buf), ",%.9g", v);
            os << buf;
        }
        os << "\n";
    }
}

EmbeddingSet EmbeddingSet::load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(Errc::io, "cannot open embeddings CSV: " + path);
    EmbeddingSet set;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("id,", 0) == 0) continue;  // header
        std::stringstream ss(line);
        std::string field;
        EmbeddingRow row;
        if (!std::getline(ss, row.id, ',') || !std::getline(ss, row.label, ','))
            fail(Errc::format, "embeddings CSV: malformed line " + std::to_string(lineno));
        while (std::getline(ss, field, ',')) {
            try {
                row.mu.push_back(std::stod(field));
            } catch (...) {
                fail(Errc::format, "embeddings CSV: bad number at line " + std::to_string(lineno));
            }
        }
        if (row.mu.empty())
            fail(Errc::format, "embeddings CSV: no values at line " + std::to_string(lineno));
        set.add(std::move(row));
    }
    if (set.rows.empty()) fail(Errc::format, "embeddings CSV is empty: " + path);
    return set;
}

std::vector<double> blend(const std::vector<std::vector<double>>& embeddings,
                          const std::vector<double>& weights) {
    if (embeddings.empty() || embeddings.size() != weights.size())
        fail(Errc::shape, "blend: embeddings and weights must be non-empty and equal length");
    double sum = 0;
    for (double w : weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-6)
        fail(Errc::args, "blend: weights sum to " + std::to_string(sum) + ", expected 1");
    std::size_t d = embeddings[0].size();
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].size() != d) fail(Errc::shape, "blend: embedding width mismatch");
        for (std::size_t c = 0; c < d; ++c) out[c] += weights[i] * embeddings[i][c];
    }
    return out;
}

std::vector<double> PcaModel::project(const std::vector<double>& e) const {
    if (int(e.size()) != dim()) fail(Errc::shape, "pca project: dimension mismatch");
    std::vector<double> coords(std::size_t(k()), 0.0);
    for (int c = 0; c < k(); ++c) {
        double acc = 0;
        for (int i = 0; i < dim(); ++i) acc += (e[std::size_t(i)] - mean[std::size_t(i)]) * components[std::size_t(c)][std::size_t(i)];
        coords[std::size_t(c)] = acc;
    }
    return coords;
}

std::vector<double> PcaModel::reconstruct(const std::vector<double>& coords) const {
    if (int(coords.size()) != k()) fail(Errc::shape, "pca reconstruct: coordinate count mismatch");
    std::vector<double> e = mean;
    for (int c = 0; c < k(); ++c)
        for (int i = 0; i < dim(); ++i)
            e[std::size_t(i)] += coords[std::size_t(c)] * components[std::size_t(c)][std::size_t(i)];
    return e;
}

PcaModel pca_fit(const EmbeddingSet& set, int k) {
    int n = int(set.rows.size());
    int d = set.dim();
    if (k < 1 || k > std::min(n - 1, d))
        fail(Errc::args, "pca_fit: k=" + std::to_string(k) + " exceeds the rank bound min(rows-1, dim)=" +
                             std::to_string(std::min(n - 1, d)));
    Eigen::MatrixXd x(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) x(r, c) = set.rows[std::size_t(r)].mu[std::size_t(c)];
    Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - mean;
    Eigen::MatrixXd cov = centered.transpose() * centered / double(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) fail(Errc::numeric, "pca_fit: eigendecomposition failed");

    PcaModel m;
    m.mean.assign(mean.data(), mean.data() + d);
    // Eigenvalues ascending; take the top k in descending order.
    for (int c = 0; c < k; ++c) {
        int idx = d - 1 - c;
        Eigen::VectorXd v = solver.eigenvectors().col(idx);
        // Deterministic sign: largest-magnitude element positive.
        int arg = 0;
        for (int i = 1; i < d; ++i)
            if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
        if (v(arg) < 0) v = -v;
        m.components.emplace_back(v.data(), v.data() + d);
        m.explained_variance.push_back(std::max(0.0, solver.eigenvalues()(idx)));
    }

    // Per-style projection statistics.
    std::map<std::string, std::vector<std::vector<double>>> by_label;
    for (const auto& r : set.rows) by_label[r.label].push_back(m.project(r.mu));
    for (auto& [label, rows] : by_label) {
        StyleProjectionStats st;
        st.mean.assign(std::size_t(k), 0.0);
        st.stdev.assign(std::size_t(k), 0.0);
        for (const auto& row : rows)
            for (int c = 0; c < k; ++c) st.mean[std::size_t(c)] += row[std::size_t(c)];
        for (int c = 0; c < k; ++c) st.mean[std::size_t(c)] /= double(rows.size());
        for (const auto& row : rows)
            for (int c = 0; c < k; ++c) {
                double e = row[std::size_t(c)] - st.mean[std::size_t(c)];
                st.stdev[std::size_t(c)] += e * e;
            }
        for (int c = 0; c < k; ++c)
            st.stdev[std::size_t(c)] = std::sqrt(st.stdev[std::size_t(c)] / double(rows.size()));
        m.style_stats[label] = std::move(st);
    }
    return m;
}

std::vector<double> pca_edit(const std::vector<double>& e, const PcaModel& model, int component,
                             double delta_std, const std::string& style) {
    if (component < 0 || component >= model.k())
        fail(Errc::args, "pca_edit: component " + std::to_string(component) + " out of range");
    auto it = model.style_stats.find(style);
    if (it == model.style_stats.end()) fail(Errc::args, "pca_edit: unknown style label \"" + style + "\"");
    std::vector<double> coords = model.project(e);
    coords[std::size_t(component)] += delta_std * it->second.stdev[std::size_t(component)];
    return model.reconstruct(coords);
}

std::string PcaModel::to_json() const {
    json j;
    j["dim"] = dim();
    j["k"] = k();
    j["mean"] = mean;
    j["components"] = components;
    j["explained_variance"] = explained_variance;
    json stats = json::object();
    for (const auto& [label, st] : style_stats)
        stats[label] = {{"mean", st.mean}, {"std", st.stdev}};
    j["style_stats"] = stats;
    return j.dump(2);
}

PcaModel PcaModel::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        fail(Errc::format, std::string("PCA model JSON: ") + e.what());
    }
    PcaModel m;
    m.mean = j.at("mean").get<std::vector<double>>();
    m.components = j.at("components").get<std::vector<std::vector<double>>>();
    m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
    for (auto it = j.at("style_stats").begin(); it != j.at("style_stats").end(); ++it) {
        StyleProjectionStats st;
        st.mean = it.value().at("mean").get<std::vector<double>>();
        st.stdev = it.value().at("std").get<std::vector<double>>();
        m.style_stats[it.key()] = std::move(st);
    }
    return m;
}

void PcaModel::save_json(const std::string& path) const {
    std::ofstream os(path);
    if (!os) fail(Errc::io, "cannot write PCA model: " + path);
    os << to_json();
}

PcaModel PcaModel::load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(Errc::io, "cannot open PCA model: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

std::string scatter_csv(const EmbeddingSet& set, const PcaModel& model) {
    if (model.k() < 2) fail(Errc::args, "scatter export needs at least 2 components");
    std::ostringstream os;
    os << "id,label,pc1,pc2\n";
    char buf[96];
    for (const auto& r : set.rows) {
        auto coords = model.project(r.mu);
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g", coords[0], coords[1]);
        os << r.id << "," << r.label << "," << buf << "\n";
    }
    return os.str();
}

}  // namespace zeggs::style_space
