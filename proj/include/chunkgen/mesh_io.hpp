#ifndef CHUNKGEN_MESH_IO_HPP
#define CHUNKGEN_MESH_IO_HPP

#include <array>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "chunkgen/tensor_file.hpp"
#include "chunkgen/vec3.hpp"

namespace chunkgen {

struct MeshData {
    std::vector<std::array<float, 3>> vertices;
    std::vector<std::array<uint32_t, 3>> triangles;
    std::vector<std::array<float, 3>> colors;  // optional, per-vertex rgb in [0,1]

    bool empty() const { return vertices.empty() && triangles.empty(); }
    bool has_colors() const { return !colors.empty(); }

    Vec3 vertex(size_t i) const {
        return {vertices[i][0], vertices[i][1], vertices[i][2]};
    }

    void validate() const {
        for (const auto& t : triangles) {
            for (uint32_t idx : t)
                if (idx >= vertices.size())
                    throw ConstraintError("mesh: triangle index out of range");
            if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
                throw ConstraintError("mesh: degenerate triangle with repeated indices");
        }
        if (!colors.empty() && colors.size() != vertices.size())
            throw ConstraintError("mesh: color count must match vertex count");
    }
};

enum class MeshFormat { Ply, Obj };

// PLY binary little-endian. Colors stored as float properties so the
// round-trip stays bit-exact.
inline void write_mesh_ply(const std::string& path, const MeshData& mesh) {
    mesh.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "ply\nformat binary_little_endian 1.0\n";
    os << "element vertex " << mesh.vertices.size() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    if (mesh.has_colors()) os << "property float red\nproperty float green\nproperty float blue\n";
    os << "element face " << mesh.triangles.size() << "\n";
    os << "property list uchar uint vertex_indices\n";
    os << "end_header\n";
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        detail::put_f32_le(os, mesh.vertices[i].data(), 3);
        if (mesh.has_colors()) detail::put_f32_le(os, mesh.colors[i].data(), 3);
    }
    for (const auto& t : mesh.triangles) {
        unsigned char n = 3;
        os.write(reinterpret_cast<const char*>(&n), 1);
        for (uint32_t idx : t) detail::put_u32_le(os, idx);
    }
    if (!os) throw FormatError("write failed: " + path);
}

inline void write_mesh_obj(const std::string& path, const MeshData& mesh) {
    mesh.validate();
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.precision(9);
    for (const auto& v : mesh.vertices) os << "v " << v[0] << " " << v[1] << " " << v[2] << "\n";
    for (const auto& t : mesh.triangles)
        os << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
    if (!os) throw FormatError("write failed: " + path);
}

inline void write_mesh(const std::string& path, const MeshData& mesh,
                       MeshFormat format = MeshFormat::Ply) {
    if (format == MeshFormat::Ply)
        write_mesh_ply(path, mesh);
    else
        write_mesh_obj(path, mesh);
}

namespace detail {

struct PlyProperty {
    std::string type;
    std::string name;
    bool is_list = false;
    std::string count_type;
};

inline double read_ply_scalar(std::istream& is, const std::string& type) {
    auto rd = [&](auto v) -> double {
        unsigned char buf[8];
        if (!is.read(reinterpret_cast<char*>(buf), sizeof(v)))
            throw FormatError("ply: truncated payload");
        uint64_t u = 0;
        for (size_t i = 0; i < sizeof(v); ++i) u |= uint64_t(buf[i]) << (8 * i);
        std::memcpy(&v, &u, sizeof(v));
        return double(v);
    };
    if (type == "float" || type == "float32") return rd(float{});
    if (type == "double" || type == "float64") return rd(double{});
    if (type == "uchar" || type == "uint8") return rd(uint8_t{});
    if (type == "char" || type == "int8") return rd(int8_t{});
    if (type == "ushort" || type == "uint16") return rd(uint16_t{});
    if (type == "short" || type == "int16") return rd(int16_t{});
    if (type == "uint" || type == "uint32") return rd(uint32_t{});
    if (type == "int" || type == "int32") return rd(int32_t{});
    throw FormatError("ply: unsupported property type " + type);
}

}  // namespace detail

inline MeshData read_mesh_ply(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line.substr(0, 3) != "ply")
        throw FormatError("ply: missing magic in " + path);

    size_t n_verts = 0, n_faces = 0;
    std::vector<detail::PlyProperty> vprops, fprops;
    std::vector<detail::PlyProperty>* cur = nullptr;
    bool binary_le = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "end_header") break;
        if (tok == "comment") continue;
        if (tok == "format") {
            std::string fmt;
            ss >> fmt;
            binary_le = (fmt == "binary_little_endian");
            if (!binary_le) throw FormatError("ply: only binary_little_endian supported");
        } else if (tok == "element") {
            std::string name;
            size_t count;
            ss >> name >> count;
            if (name == "vertex") {
                n_verts = count;
                cur = &vprops;
            } else if (name == "face") {
                n_faces = count;
                cur = &fprops;
            } else {
                throw FormatError("ply: unsupported element " + name);
            }
        } else if (tok == "property") {
            if (!cur) throw FormatError("ply: property before element");
            detail::PlyProperty p;
            std::string t;
            ss >> t;
            if (t == "list") {
                p.is_list = true;
                ss >> p.count_type >> p.type >> p.name;
            } else {
                p.type = t;
                ss >> p.name;
            }
            cur->push_back(p);
        } else if (tok.empty()) {
            continue;
        } else {
            throw FormatError("ply: malformed header line: " + line);
        }
    }
    if (!binary_le) throw FormatError("ply: malformed header (no format line)");

    MeshData mesh;
    mesh.vertices.resize(n_verts);
    int xi = -1, yi = -1, zi = -1, ri = -1, gi = -1, bi = -1;
    for (size_t i = 0; i < vprops.size(); ++i) {
        const auto& n = vprops[i].name;
        if (n == "x") xi = int(i);
        if (n == "y") yi = int(i);
        if (n == "z") zi = int(i);
        if (n == "red") ri = int(i);
        if (n == "green") gi = int(i);
        if (n == "blue") bi = int(i);
    }
    if (xi < 0 || yi < 0 || zi < 0) throw FormatError("ply: vertex xyz properties missing");
    bool has_color = ri >= 0 && gi >= 0 && bi >= 0;
    bool color_uchar = has_color && (vprops[size_t(ri)].type == "uchar" ||
                                     vprops[size_t(ri)].type == "uint8");
    if (has_color) mesh.colors.resize(n_verts);

    std::vector<double> vals(vprops.size());
    for (size_t v = 0; v < n_verts; ++v) {
        for (size_t p = 0; p < vprops.size(); ++p) {
            if (vprops[p].is_list) throw FormatError("ply: list property on vertex");
            vals[p] = detail::read_ply_scalar(is, vprops[p].type);
        }
        mesh.vertices[v] = {float(vals[size_t(xi)]), float(vals[size_t(yi)]),
                            float(vals[size_t(zi)])};
        if (has_color) {
            double s = color_uchar ? 1.0 / 255.0 : 1.0;
            mesh.colors[v] = {float(vals[size_t(ri)] * s), float(vals[size_t(gi)] * s),
                              float(vals[size_t(bi)] * s)};
        }
    }

    mesh.triangles.reserve(n_faces);
    for (size_t f = 0; f < n_faces; ++f) {
        for (const auto& p : fprops) {
            if (!p.is_list) {
                detail::read_ply_scalar(is, p.type);
                continue;
            }
            size_t cnt = size_t(detail::read_ply_scalar(is, p.count_type));
            std::vector<uint32_t> idx(cnt);
            for (size_t i = 0; i < cnt; ++i)
                idx[i] = uint32_t(detail::read_ply_scalar(is, p.type));
            if (p.name == "vertex_indices" || p.name == "vertex_index") {
                // Fan-triangulate polygons.
                for (size_t i = 2; i < cnt; ++i)
                    mesh.triangles.push_back({idx[0], idx[i - 1], idx[i]});
            }
        }
    }
    mesh.validate();
    return mesh;
}

inline MeshData read_mesh_obj(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);
    MeshData mesh;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "v") {
            std::array<float, 3> v;
            ss >> v[0] >> v[1] >> v[2];
            if (!ss) throw FormatError("obj: malformed vertex: " + line);
            mesh.vertices.push_back(v);
        } else if (tok == "f") {
            std::vector<uint32_t> idx;
            std::string ref;
            while (ss >> ref) {
                // "i", "i/j", "i/j/k" forms; only the vertex index matters.
                long v = std::strtol(ref.c_str(), nullptr, 10);
                if (v == 0) throw FormatError("obj: malformed face: " + line);
                if (v < 0) v = long(mesh.vertices.size()) + v + 1;
                idx.push_back(uint32_t(v - 1));
            }
            if (idx.size() < 3) throw FormatError("obj: face with <3 vertices: " + line);
            for (size_t i = 2; i < idx.size(); ++i)
                mesh.triangles.push_back({idx[0], idx[i - 1], idx[i]});
        }
    }
    mesh.validate();
    return mesh;
}

inline MeshData read_mesh(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw FormatError("cannot open: " + path);
    char head[3] = {0, 0, 0};
    probe.read(head, 3);
    probe.close();
    if (head[0] == 'p' && head[1] == 'l' && head[2] == 'y') return read_mesh_ply(path);
    return read_mesh_obj(path);
}

}  // namespace chunkgen

#endif
