#pragma once

#include <hierctl/mesh.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace hierctl {

/// Floating values with 17 significant digits; integers verbatim.
inline std::string csv_cell(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
inline std::string csv_cell(int v) { return std::to_string(v); }
inline std::string csv_cell(std::size_t v) { return std::to_string(v); }
inline std::string csv_cell(const std::string& v) { return v; }
inline std::string csv_cell(const char* v) { return v; }

class CsvTable {
public:
    explicit CsvTable(std::string header) : text_(std::move(header) + "\n") {}

    template <class... Cells>
    void row(const Cells&... cells) {
        std::string line;
        ((line += (line.empty() ? "" : ",") + csv_cell(cells)), ...);
        text_ += line + "\n";
    }

    const std::string& str() const { return text_; }

private:
    std::string text_;
};

/// Header line "# nx ny nt", then for each time level ny rows of nx values.
inline std::string dump_field(const Grid& g, const SpaceTimeField& f) {
    std::string out = "# " + std::to_string(g.nx[0]) + " " + std::to_string(g.nx[1]) + " " + std::to_string(g.nt) + "\n";
    for (int k = 0; k < f.levels(); ++k)
        for (int j = 0; j < g.nx[1]; ++j) {
            for (int i = 0; i < g.nx[0]; ++i) {
                if (i) out += ' ';
                out += csv_cell(f(g.node(i, j), k));
            }
            out += '\n';
        }
    return out;
}

/// Files produced by one run, kept in memory until the run succeeds.
struct Artifacts {
    std::vector<std::pair<std::string, std::string>> files;
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();

    void add(std::string name, std::string content) { files.emplace_back(std::move(name), std::move(content)); }
    const std::string* find(const std::string& name) const {
        for (const auto& [n, c] : files)
            if (n == name) return &c;
        return nullptr;
    }
};

/// JSON number, or null when not finite.
inline nlohmann::ordered_json json_number(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << content;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

} // namespace hierctl
