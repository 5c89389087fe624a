// SPDX-License-Identifier: Apache-2.0
#include "distill3d/tetmesh.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "distill3d/errors.hpp"

namespace distill3d {

namespace {

std::uint64_t next_uid() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

constexpr double kMinFaceArea = 1e-12;

}  // namespace

double signed_tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    return dot(b - a, cross(c - a, d - a)) / 6.0;
}

void TetGrid::clamp_deformation() {
    const double limit = max_deform();
    for (Vec3& d : deform)
        for (int a = 0; a < 3; ++a) d[a] = std::clamp(d[a], -limit, limit);
}

TetGrid build_tet_grid(int resolution) {
    if (resolution < 8 || resolution > 128) throw InvalidArgument("build_tet_grid: resolution must be in [8, 128]");
    TetGrid g;
    g.resolution = resolution;
    g.uid = next_uid();
    const int n = resolution + 1;
    const double h = g.spacing();
    g.vertices.reserve(std::size_t(n) * n * n);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) g.vertices.push_back({-1.0 + h * i, -1.0 + h * j, -1.0 + h * k});
    g.sdf.assign(g.vertices.size(), 0.0);
    g.deform.assign(g.vertices.size(), Vec3{});

    // Kuhn split: one tet per axis permutation, all sharing the (0,0,0)-(1,1,1) diagonal.
    static constexpr int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    g.tets.reserve(std::size_t(resolution) * resolution * resolution * 6);
    for (int k = 0; k < resolution; ++k)
        for (int j = 0; j < resolution; ++j)
            for (int i = 0; i < resolution; ++i)
                for (const auto& perm : kPerms) {
                    std::array<int, 3> p{i, j, k};
                    std::array<int, 4> tet{};
                    tet[0] = g.vertex_index(p[0], p[1], p[2]);
                    for (int s = 0; s < 3; ++s) {
                        ++p[perm[s]];
                        tet[s + 1] = g.vertex_index(p[0], p[1], p[2]);
                    }
                    if (signed_tet_volume(g.vertices[tet[0]], g.vertices[tet[1]], g.vertices[tet[2]],
                                          g.vertices[tet[3]]) < 0.0)
                        std::swap(tet[2], tet[3]);
                    g.tets.push_back(tet);
                }
    return g;
}

namespace {

struct EdgeKey {
    int a, b;  // a < b
    auto operator<=>(const EdgeKey&) const = default;
};

EdgeKey make_key(int a, int b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

double crossing_lambda(double sa, double sb) { return sa / (sa - sb); }

Vec3 crossing_point(const TetGrid& g, const EdgeKey& e, double lambda) {
    return g.position(e.a) * (1.0 - lambda) + g.position(e.b) * lambda;
}

struct RawFace {
    std::array<EdgeKey, 3> edges;
    Vec3 outward;  // from inside centroid to outside centroid
};

}  // namespace

SurfaceMesh marching_tets(const TetGrid& grid) {
    std::vector<RawFace> raw;
    std::size_t zero_tets = 0;
    for (const auto& tet : grid.tets) {
        std::array<int, 4> inside{}, outside{};
        int n_in = 0, n_out = 0;
        bool all_zero = true;
        for (int v : tet) {
            const double s = grid.sdf[v];
            all_zero &= s == 0.0;
            if (s < 0.0)
                inside[n_in++] = v;
            else
                outside[n_out++] = v;  // zero counts as outside
        }
        if (all_zero) ++zero_tets;
        if (n_in == 0 || n_out == 0) continue;

        Vec3 c_in, c_out;
        for (int i = 0; i < n_in; ++i) c_in += grid.position(inside[i]);
        for (int i = 0; i < n_out; ++i) c_out += grid.position(outside[i]);
        const Vec3 outward = c_out / n_out - c_in / n_in;

        if (n_in == 1 || n_out == 1) {
            const int apex = n_in == 1 ? inside[0] : outside[0];
            const int* others = n_in == 1 ? outside.data() : inside.data();
            raw.push_back({{make_key(apex, others[0]), make_key(apex, others[1]), make_key(apex, others[2])}, outward});
        } else {
            // quad a-c, a-d, b-d, b-c split along (a-c, b-d)
            const int a = inside[0], b = inside[1], c = outside[0], d = outside[1];
            raw.push_back({{make_key(a, c), make_key(a, d), make_key(b, d)}, outward});
            raw.push_back({{make_key(a, c), make_key(b, d), make_key(b, c)}, outward});
        }
    }
    if (zero_tets > 0) spdlog::warn("marching_tets: {} tets with all-zero SDF treated as outside", zero_tets);

    std::vector<EdgeKey> keys;
    keys.reserve(raw.size() * 3);
    for (const auto& f : raw)
        for (const auto& e : f.edges) keys.push_back(e);
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

    std::vector<Vec3> positions(keys.size());
    std::vector<double> lambdas(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        lambdas[i] = crossing_lambda(grid.sdf[keys[i].a], grid.sdf[keys[i].b]);
        positions[i] = crossing_point(grid, keys[i], lambdas[i]);
    }
    auto index_of = [&](const EdgeKey& e) {
        return static_cast<int>(std::lower_bound(keys.begin(), keys.end(), e) - keys.begin());
    };

    std::vector<std::array<int, 3>> faces;
    faces.reserve(raw.size());
    for (const auto& f : raw) {
        std::array<int, 3> tri{index_of(f.edges[0]), index_of(f.edges[1]), index_of(f.edges[2])};
        const Vec3 n = cross(positions[tri[1]] - positions[tri[0]], positions[tri[2]] - positions[tri[0]]);
        if (0.5 * norm(n) < kMinFaceArea) continue;
        if (dot(n, f.outward) < 0.0) std::swap(tri[1], tri[2]);
        faces.push_back(tri);
    }

    // compact away vertices only referenced by dropped faces
    std::vector<int> remap(keys.size(), -1);
    for (const auto& f : faces)
        for (int v : f) remap[v] = 0;
    SurfaceMesh mesh;
    mesh.source_uid = grid.uid;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (remap[i] < 0) continue;
        remap[i] = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(positions[i]);
        mesh.provenance.push_back({keys[i].a, keys[i].b, lambdas[i]});
    }
    for (auto& f : faces)
        for (int& v : f) v = remap[v];
    mesh.faces = std::move(faces);
    if (!mesh.faces.empty()) mesh.normals = vertex_normals(mesh);
    return mesh;
}

TetGradients marching_tets_backward(const TetGrid& grid, const SurfaceMesh& mesh, std::span<const Vec3> upstream) {
    if (mesh.source_uid != grid.uid || mesh.provenance.size() != mesh.vertices.size())
        throw StaleStateError("marching_tets_backward: mesh was not extracted from this grid");
    if (upstream.size() != mesh.vertices.size())
        throw InvalidArgument("marching_tets_backward: one upstream gradient per mesh vertex required");
    TetGradients g;
    g.sdf.assign(grid.vertices.size(), 0.0);
    g.deform.assign(grid.vertices.size(), Vec3{});
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const EdgeProvenance& p = mesh.provenance[v];
        const double sa = grid.sdf[p.a], sb = grid.sdf[p.b];
        const double lambda = crossing_lambda(sa, sb);
        if (lambda != p.lambda || (sa < 0.0) == (sb < 0.0) ||
            crossing_point(grid, make_key(p.a, p.b), lambda) != mesh.vertices[v])
            throw StaleStateError("marching_tets_backward: SDF or deformation changed since extraction");
        const Vec3& up = upstream[v];
        const Vec3 edge = grid.position(p.b) - grid.position(p.a);
        const double denom = (sa - sb) * (sa - sb);
        const double d_lambda = dot(up, edge);
        g.sdf[p.a] += d_lambda * (-sb / denom);
        g.sdf[p.b] += d_lambda * (sa / denom);
        g.deform[p.a] += up * (1.0 - lambda);
        g.deform[p.b] += up * lambda;
    }
    return g;
}

std::vector<Vec3> vertex_normals(const SurfaceMesh& mesh) {
    std::vector<Vec3> acc(mesh.vertices.size());
    for (const auto& f : mesh.faces) {
        const Vec3 n = cross(mesh.vertices[f[1]] - mesh.vertices[f[0]], mesh.vertices[f[2]] - mesh.vertices[f[0]]);
        for (int v : f) acc[v] += n;
    }
    for (std::size_t v = 0; v < acc.size(); ++v) {
        const double len = norm(acc[v]);
        if (!(len > 0.0)) throw GeometryError("vertex_normals: vertex " + std::to_string(v) + " has no incident area");
        acc[v] = acc[v] / len;
    }
    return acc;
}

std::vector<Vec3> vertex_normals_backward(const SurfaceMesh& mesh, std::span<const Vec3> upstream) {
    if (upstream.size() != mesh.vertices.size())
        throw InvalidArgument("vertex_normals_backward: one upstream gradient per vertex required");
    std::vector<Vec3> acc(mesh.vertices.size());
    for (const auto& f : mesh.faces) {
        const Vec3 n = cross(mesh.vertices[f[1]] - mesh.vertices[f[0]], mesh.vertices[f[2]] - mesh.vertices[f[0]]);
        for (int v : f) acc[v] += n;
    }
    // d(m/|m|) = (I − n nᵀ)/|m|
    std::vector<Vec3> d_acc(acc.size());
    for (std::size_t v = 0; v < acc.size(); ++v) {
        const double len = norm(acc[v]);
        if (!(len > 0.0)) throw GeometryError("vertex_normals_backward: isolated vertex");
        const Vec3 n = acc[v] / len;
        d_acc[v] = (upstream[v] - n * dot(n, upstream[v])) / len;
    }
    std::vector<Vec3> grad(mesh.vertices.size());
    for (const auto& f : mesh.faces) {
        const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        const Vec3 G = d_acc[f[0]] + d_acc[f[1]] + d_acc[f[2]];
        const Vec3 g1 = cross(e2, G);
        const Vec3 g2 = cross(G, e1);
        grad[f[1]] += g1;
        grad[f[2]] += g2;
        grad[f[0]] -= g1 + g2;
    }
    return grad;
}

void write_obj(const std::filesystem::path& path, const SurfaceMesh& mesh) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    if (mesh.faces.empty()) spdlog::warn("export_mesh: writing empty mesh to {}", path.string());
    char buf[128];
    for (const Vec3& v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.6f %.6f %.6f\n", v.x, v.y, v.z);
        out << buf;
    }
    for (const Vec3& n : mesh.normals) {
        std::snprintf(buf, sizeof(buf), "vn %.6f %.6f %.6f\n", n.x, n.y, n.z);
        out << buf;
    }
    for (const auto& f : mesh.faces) {
        const int a = f[0] + 1, b = f[1] + 1, c = f[2] + 1;
        out << "f " << a << "//" << a << ' ' << b << "//" << b << ' ' << c << "//" << c << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

void write_ply(const std::filesystem::path& path, const SurfaceMesh& mesh, std::span<const Rgb> colors) {
    if (colors.size() != mesh.vertices.size()) throw InvalidArgument("write_ply: one color per vertex required");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "ply\nformat ascii 1.0\n"
        << "element vertex " << mesh.vertices.size() << '\n'
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "element face " << mesh.faces.size() << '\n'
        << "property list uchar int vertex_indices\nend_header\n";
    char buf[160];
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        auto byte = [](double c) { return static_cast<int>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0)); };
        const Vec3& p = mesh.vertices[v];
        std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f %d %d %d\n", p.x, p.y, p.z, byte(colors[v][0]),
                      byte(colors[v][1]), byte(colors[v][2]));
        out << buf;
    }
    for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

void export_mesh(const SurfaceMesh& mesh, const std::optional<std::vector<Rgb>>& colors,
                 const std::filesystem::path& obj_path) {
    write_obj(obj_path, mesh);
    if (colors) {
        auto ply = obj_path;
        ply.replace_extension(".ply");
        write_ply(ply, mesh, *colors);
    }
}

SurfaceMesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    SurfaceMesh mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v" || tag == "vn") {
            Vec3 p;
            if (!(ls >> p.x >> p.y >> p.z)) throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad vector");
            (tag == "v" ? mesh.vertices : mesh.normals).push_back(p);
        } else if (tag == "f") {
            std::array<int, 3> f{};
            for (int& idx : f) {
                std::string tok;
                if (!(ls >> tok)) throw IoError(path.string() + ":" + std::to_string(line_no) + ": non-triangular face");
                idx = std::stoi(tok.substr(0, tok.find('/'))) - 1;
                if (idx < 0) throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad index");
            }
            mesh.faces.push_back(f);
        }
    }
    for (const auto& f : mesh.faces)
        for (int v : f)
            if (v >= static_cast<int>(mesh.vertices.size())) throw IoError(path.string() + ": face index out of range");
    if (mesh.normals.size() != mesh.vertices.size() && !mesh.faces.empty()) mesh.normals = vertex_normals(mesh);
    return mesh;
}

void save_tet_grid(const std::filesystem::path& path, const TetGrid& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "TETGRID " << grid.resolution << ' ' << (grid.origin == TetGridOrigin::FromNerf ? "nerf" : "built") << '\n';
    static_assert(std::endian::native == std::endian::little, "TETGRID writer assumes a little-endian host");
    out.write(reinterpret_cast<const char*>(grid.sdf.data()), std::streamsize(grid.sdf.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(grid.deform.data()), std::streamsize(grid.deform.size() * sizeof(Vec3)));
    if (!out) throw IoError("write failed: " + path.string());
}

TetGrid load_tet_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    std::istringstream hs(line);
    std::string magic, origin;
    int res = 0;
    if (!(hs >> magic >> res >> origin) || magic != "TETGRID") throw IoError(path.string() + ": malformed TETGRID header");
    TetGrid g = build_tet_grid(res);
    g.origin = origin == "nerf" ? TetGridOrigin::FromNerf : TetGridOrigin::Built;
    in.read(reinterpret_cast<char*>(g.sdf.data()), std::streamsize(g.sdf.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(g.deform.data()), std::streamsize(g.deform.size() * sizeof(Vec3)));
    if (!in) throw IoError(path.string() + ": truncated TETGRID payload");
    return g;
}

}  // namespace distill3d
