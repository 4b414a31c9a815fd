#pragma once
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hpnet/binio.hpp"
#include "hpnet/error.hpp"
#include "hpnet/subject.hpp"
#include "hpnet/volume.hpp"

// File formats and ingestion: the VOL3 volume container, the manifest CSV,
// per-volume intensity normalization, and the flat key=value config format.

namespace hpnet {

// ---- VOL3: "VOL3" magic, three u32 LE dims (x,y,z), x-fastest f32 LE ------

inline void write_volume(const Volume& v, const std::string& path) {
    v.validate();
    binio::Writer w(path);
    w.bytes("VOL3");
    w.u32(std::uint32_t(v.dims.x));
    w.u32(std::uint32_t(v.dims.y));
    w.u32(std::uint32_t(v.dims.z));
    w.f32_array(v.voxels.data(), v.voxels.size());
    w.close();
}

inline Volume read_volume(const std::string& path) {
    binio::Reader r(path);
    const std::string magic = r.bytes(4, "magic");
    if (magic != "VOL3")
        throw IoError(path + ": bad magic at offset 0 (expected \"VOL3\", got \"" + magic + "\")");
    const std::uint32_t dx = r.u32("dim x"), dy = r.u32("dim y"), dz = r.u32("dim z");
    if (dx == 0 || dy == 0 || dz == 0)
        throw IoError(path + ": zero dimension in header at offset 4");
    const std::uint64_t count = std::uint64_t(dx) * dy * dz;
    if (count > (std::uint64_t(1) << 31))
        throw IoError(path + ": dims " + std::to_string(dx) + "x" + std::to_string(dy) + "x" +
                      std::to_string(dz) + " overflow the payload limit");
    Volume v(Dims3{int(dx), int(dy), int(dz)});
    r.f32_array(v.voxels.data(), std::size_t(count), "voxel payload");
    if (!r.at_eof())
        throw IoError(path + ": trailing bytes after voxel payload at offset " +
                      std::to_string(r.offset()));
    for (float f : v.voxels)
        if (!std::isfinite(f)) throw NumericError(path + ": non-finite voxel");
    return v;
}

// ---- intensity normalization ----------------------------------------------

// Per-volume z-score; scanner-gain invariant by construction.
inline Volume normalize_intensity(const Volume& v) {
    if (v.voxels.empty()) throw ShapeError("normalize_intensity: empty volume");
    double mean = 0.0;
    for (float f : v.voxels) mean += f;
    mean /= double(v.voxels.size());
    double var = 0.0;
    for (float f : v.voxels) var += (f - mean) * (f - mean);
    var /= double(v.voxels.size());
    if (var == 0.0) throw NumericError("normalize_intensity: zero variance volume");
    const double inv = 1.0 / std::sqrt(var);
    Volume out(v.dims);
    for (std::size_t i = 0; i < v.voxels.size(); ++i)
        out.voxels[i] = float((v.voxels[i] - mean) * inv);
    return out;
}

// ---- manifest CSV ----------------------------------------------------------

inline const std::vector<std::string>& manifest_columns() {
    static const std::vector<std::string> cols = {
        "subject_id", "left_path", "right_path", "label",  "time_months",      "event",
        "age",        "sex",       "education",  "apoe4",  "adas13",           "ravlt_immediate",
        "ravlt_learning", "faq",   "mmse",       "csf_abeta42", "suvr"};
    return cols;
}

struct ManifestRow {
    std::string id, left_path, right_path;
    Diagnosis label = Diagnosis::MCI;
    std::optional<double> time_months;
    std::optional<int> event;
    ClinicalVars clinical;
};

namespace iodetail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::optional<double> parse_opt(const std::string& s, const std::string& what, int line_no) {
    if (s.empty()) return std::nullopt;
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError("manifest line " + std::to_string(line_no) + ": bad " + what + " value \"" +
                      s + "\"");
    }
}

}  // namespace iodetail

inline std::vector<ManifestRow> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ": empty manifest");
    auto header = iodetail::split_csv(line);
    if (header != manifest_columns()) {
        std::string expect;
        for (const auto& c : manifest_columns()) expect += (expect.empty() ? "" : ",") + c;
        throw IoError(path + ": manifest header mismatch; expected \"" + expect + "\"");
    }

    std::vector<ManifestRow> rows;
    std::map<std::string, int> seen;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = iodetail::split_csv(line);
        if (f.size() != manifest_columns().size())
            throw IoError(path + " line " + std::to_string(line_no) + ": expected " +
                          std::to_string(manifest_columns().size()) + " fields, got " +
                          std::to_string(f.size()));
        ManifestRow r;
        r.id = f[0];
        if (r.id.empty()) throw IoError(path + " line " + std::to_string(line_no) + ": empty id");
        if (seen.count(r.id))
            throw IoError(path + " line " + std::to_string(line_no) + ": duplicate subject_id \"" +
                          r.id + "\" (first at line " + std::to_string(seen[r.id]) + ")");
        seen[r.id] = line_no;
        r.left_path = f[1];
        r.right_path = f[2];
        if (f[3] == "NC") r.label = Diagnosis::NC;
        else if (f[3] == "AD") r.label = Diagnosis::AD;
        else if (f[3] == "MCI") r.label = Diagnosis::MCI;
        else throw IoError(path + " line " + std::to_string(line_no) + ": bad label \"" + f[3] + "\"");
        r.time_months = iodetail::parse_opt(f[4], "time_months", line_no);
        if (!f[5].empty()) {
            if (f[5] != "0" && f[5] != "1")
                throw IoError(path + " line " + std::to_string(line_no) + ": event must be 0 or 1");
            r.event = f[5] == "1" ? 1 : 0;
        }
        if (r.label == Diagnosis::MCI && (!r.time_months || !r.event))
            throw IoError(path + " line " + std::to_string(line_no) +
                          ": MCI row must carry time_months and event");
        auto& c = r.clinical;
        c.age = iodetail::parse_opt(f[6], "age", line_no);
        c.sex = iodetail::parse_opt(f[7], "sex", line_no);
        c.education = iodetail::parse_opt(f[8], "education", line_no);
        c.apoe4 = iodetail::parse_opt(f[9], "apoe4", line_no);
        c.adas13 = iodetail::parse_opt(f[10], "adas13", line_no);
        c.ravlt_immediate = iodetail::parse_opt(f[11], "ravlt_immediate", line_no);
        c.ravlt_learning = iodetail::parse_opt(f[12], "ravlt_learning", line_no);
        c.faq = iodetail::parse_opt(f[13], "faq", line_no);
        c.mmse = iodetail::parse_opt(f[14], "mmse", line_no);
        c.csf_abeta42 = iodetail::parse_opt(f[15], "csf_abeta42", line_no);
        c.suvr = iodetail::parse_opt(f[16], "suvr", line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

// 9 significant digits; CSV output round-trips to the printed precision.
inline std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string opt_str(const std::optional<double>& v) { return v ? fmt9(*v) : ""; }

inline void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    std::string header;
    for (const auto& c : manifest_columns()) header += (header.empty() ? "" : ",") + c;
    out << header << "\n";
    for (const auto& r : rows) {
        out << r.id << "," << r.left_path << "," << r.right_path << "," << to_string(r.label) << ","
            << opt_str(r.time_months) << "," << (r.event ? std::to_string(*r.event) : "") << ","
            << opt_str(r.clinical.age) << "," << opt_str(r.clinical.sex) << ","
            << opt_str(r.clinical.education) << "," << opt_str(r.clinical.apoe4) << ","
            << opt_str(r.clinical.adas13) << "," << opt_str(r.clinical.ravlt_immediate) << ","
            << opt_str(r.clinical.ravlt_learning) << "," << opt_str(r.clinical.faq) << ","
            << opt_str(r.clinical.mmse) << "," << opt_str(r.clinical.csf_abeta42) << ","
            << opt_str(r.clinical.suvr) << "\n";
    }
    out.close();
    if (!out) throw IoError("write failed for " + path);
}

// Volume paths resolve against the manifest's own directory unless absolute.
inline std::string resolve_path(const std::string& manifest_path, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return rel;
    return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

// ---- flat key=value config --------------------------------------------------

inline std::map<std::string, std::string> parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos || line[start] == '#') continue;
        std::size_t eq = line.find('=', start);
        if (eq == std::string::npos)
            throw ConfigError(path + " line " + std::to_string(line_no) + ": expected key=value");
        std::string key = line.substr(start, eq - start);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            std::size_t a = s.find_first_not_of(" \t");
            std::size_t b = s.find_last_not_of(" \t");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(value);
        if (key.empty())
            throw ConfigError(path + " line " + std::to_string(line_no) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

class Config {
public:
    Config() = default;
    explicit Config(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    double get_double(const std::string& key, double fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": bad numeric value \"" + it->second + "\"");
        }
    }

    long get_long(const std::string& key, long fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            return std::stol(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": bad integer value \"" + it->second + "\"");
        }
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        try {
            return std::stoull(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": bad integer value \"" + it->second + "\"");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        if (it->second == "1" || it->second == "true") return true;
        if (it->second == "0" || it->second == "false") return false;
        throw ConfigError("config key " + key + ": expected 0/1/true/false");
    }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace hpnet
