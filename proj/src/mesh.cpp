#include "mpk/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>

#include "mpk/errors.hpp"
#include "mpk/geom2d.hpp"

namespace mpk {

// ---------------------------------------------------------------------------
// 2D triangle geometry

bool point_in_triangle(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
    const double d1 = signed_area2(p, a, b);
    const double d2 = signed_area2(p, b, c);
    const double d3 = signed_area2(p, c, a);
    const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
    const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
    return !(has_neg && has_pos);
}

SegmentHit closest_point_on_segment(const Vec2& p, const Vec2& u, const Vec2& v) {
    const Vec2 e = v - u;
    const double len2 = e.squaredNorm();
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp((p - u).dot(e) / len2, 0.0, 1.0);
    SegmentHit hit;
    hit.t = t;
    hit.point = u + t * e;
    hit.dist2 = (p - hit.point).squaredNorm();
    return hit;
}

BoundaryHit closest_boundary_point(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
    const Vec2 verts[3] = {a, b, c};
    BoundaryHit best{std::numeric_limits<double>::infinity(), -1, 0.0};
    for (int e = 0; e < 3; ++e) {
        const SegmentHit hit = closest_point_on_segment(p, verts[e], verts[(e + 1) % 3]);
        if (hit.dist2 < best.dist2) best = BoundaryHit{hit.dist2, e, hit.t};
    }
    return best;
}

std::array<double, 3> barycentric_in_triangle(const Vec2& p, const Vec2& a, const Vec2& b,
                                              const Vec2& c) {
    const double total = signed_area2(a, b, c);
    if (total == 0.0) return {1.0, 0.0, 0.0};
    const double wa = signed_area2(p, b, c) / total;
    const double wb = signed_area2(a, p, c) / total;
    return {wa, wb, 1.0 - wa - wb};
}

ClampedBarycentric clamped_barycentric(const Vec2& p, const Vec2& a, const Vec2& b,
                                       const Vec2& c) {
    ClampedBarycentric out{};
    if (point_in_triangle(p, a, b, c)) {
        out.weights = barycentric_in_triangle(p, a, b, c);
        out.region = 0;
        out.feature = -1;
        return out;
    }
    const BoundaryHit hit = closest_boundary_point(p, a, b, c);
    const int i = hit.edge, j = (hit.edge + 1) % 3;
    out.weights = {0.0, 0.0, 0.0};
    constexpr double kEndTol = 1e-12;
    if (hit.t <= kEndTol) {
        out.weights[i] = 1.0;
        out.region = 2;
        out.feature = i;
    } else if (hit.t >= 1.0 - kEndTol) {
        out.weights[j] = 1.0;
        out.region = 2;
        out.feature = j;
    } else {
        out.weights[i] = 1.0 - hit.t;
        out.weights[j] = hit.t;
        out.region = 1;
        out.feature = hit.edge;
        out.t = hit.t;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Topology

MeshTopology build_topology(const std::vector<std::array<int, 3>>& faces, int vertex_count,
                            const Points2& uv_atlas, const Points3& rest_positions) {
    if (uv_atlas.rows() != vertex_count)
        throw AtlasLengthMismatch("atlas has " + std::to_string(uv_atlas.rows()) +
                                  " entries, expected " + std::to_string(vertex_count));
    if (rest_positions.rows() != vertex_count)
        throw ShapeMismatch("rest positions must have V rows");

    MeshTopology topo;
    topo.vertex_count = vertex_count;
    topo.faces = faces;
    topo.uv_atlas = uv_atlas;
    topo.rest_positions = rest_positions;
    topo.face_adjacency.assign(vertex_count, {});

    std::map<std::pair<int, int>, int> edge_set;
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const auto& tri = faces[f];
        for (int m = 0; m < 3; ++m) {
            if (tri[m] < 0 || tri[m] >= vertex_count)
                throw IndexOutOfRange("face " + std::to_string(f) + " references vertex " +
                                      std::to_string(tri[m]));
        }
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            throw DegenerateFace("face " + std::to_string(f) + " repeats a vertex");
        for (int m = 0; m < 3; ++m) {
            const int u = tri[m], v = tri[(m + 1) % 3];
            edge_set.emplace(std::minmax(u, v), 0);
            topo.face_adjacency[tri[m]].push_back(static_cast<int>(f));
        }
    }
    topo.edges.reserve(edge_set.size());
    for (const auto& [edge, _] : edge_set) topo.edges.push_back(edge);
    return topo;
}

void validate_barycentric(const BarycentricCoord& bc, const MeshTopology& topo) {
    if (bc.face < 0 || bc.face >= static_cast<int>(topo.faces.size()))
        throw InvalidBarycentric("face index " + std::to_string(bc.face) + " out of range");
    double sum = 0.0;
    for (double w : bc.weights) {
        if (w < -1e-9) throw InvalidBarycentric("negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidBarycentric("weights do not sum to 1");
}

Landmarker make_landmarker(const MatX& weights) {
    for (Eigen::Index j = 0; j < weights.rows(); ++j) {
        double sum = 0.0;
        for (Eigen::Index v = 0; v < weights.cols(); ++v) {
            if (weights(j, v) < 0.0) throw InvalidConfig("landmarker weights must be nonnegative");
            sum += weights(j, v);
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw InvalidConfig("landmarker row " + std::to_string(j) + " sums to " +
                                std::to_string(sum));
    }
    return Landmarker{weights};
}

// ---------------------------------------------------------------------------
// Surface queries

VecX interpolate_on_face(const MeshTopology& topo, const BarycentricCoord& bc, const MatX& attr) {
    validate_barycentric(bc, topo);
    if (attr.rows() != topo.vertex_count)
        throw ShapeMismatch("attribute table must have V rows");
    const auto& tri = topo.faces[bc.face];
    VecX out = VecX::Zero(attr.cols());
    for (int m = 0; m < 3; ++m) out += bc.weights[m] * attr.row(tri[m]).transpose();
    return out;
}

Vec2 interpolate_uv(const MeshTopology& topo, const BarycentricCoord& bc) {
    const VecX u = interpolate_on_face(topo, bc, topo.uv_atlas);
    return Vec2(u(0), u(1));
}

UvLocation uv_to_barycentric(const MeshTopology& topo, const Vec2& uv) {
    if (topo.faces.empty()) throw EmptyTopology("mesh has no faces");

    // Containment pass; first (lowest-index) containing face wins.
    for (std::size_t f = 0; f < topo.faces.size(); ++f) {
        const auto& tri = topo.faces[f];
        const Vec2 a = topo.uv_atlas.row(tri[0]), b = topo.uv_atlas.row(tri[1]),
                   c = topo.uv_atlas.row(tri[2]);
        if (signed_area2(a, b, c) == 0.0) continue;
        if (point_in_triangle(uv, a, b, c)) {
            auto w = barycentric_in_triangle(uv, a, b, c);
            for (double& x : w) x = std::max(x, 0.0);
            const double sum = w[0] + w[1] + w[2];
            UvLocation loc;
            loc.bc.face = static_cast<int>(f);
            loc.bc.weights = {w[0] / sum, w[1] / sum, w[2] / sum};
            return loc;
        }
    }

    // Snap to the nearest triangle.
    double best_d2 = std::numeric_limits<double>::infinity();
    UvLocation loc;
    loc.snapped = true;
    for (std::size_t f = 0; f < topo.faces.size(); ++f) {
        const auto& tri = topo.faces[f];
        const Vec2 a = topo.uv_atlas.row(tri[0]), b = topo.uv_atlas.row(tri[1]),
                   c = topo.uv_atlas.row(tri[2]);
        const ClampedBarycentric cb = clamped_barycentric(uv, a, b, c);
        const Vec2 q = cb.weights[0] * a + cb.weights[1] * b + cb.weights[2] * c;
        const double d2 = (uv - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            loc.bc.face = static_cast<int>(f);
            loc.bc.weights = cb.weights;
        }
    }
    return loc;
}

// ---------------------------------------------------------------------------
// Geodesics (Dijkstra over the edge graph)

VecX geodesic_distances_from(const MeshTopology& topo, const Points3& positions, int source) {
    if (positions.rows() != topo.vertex_count)
        throw ShapeMismatch("positions must have V rows");
    if (source < 0 || source >= topo.vertex_count)
        throw IndexOutOfRange("source vertex out of range");

    std::vector<std::vector<std::pair<int, double>>> adj(topo.vertex_count);
    for (const auto& [u, v] : topo.edges) {
        const double w = (positions.row(u) - positions.row(v)).norm();
        adj[u].emplace_back(v, w);
        adj[v].emplace_back(u, w);
    }

    VecX dist = VecX::Constant(topo.vertex_count, std::numeric_limits<double>::infinity());
    dist(source) = 0.0;
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    queue.emplace(0.0, source);
    while (!queue.empty()) {
        const auto [d, u] = queue.top();
        queue.pop();
        if (d > dist(u)) continue;
        for (const auto& [v, w] : adj[u]) {
            if (d + w < dist(v)) {
                dist(v) = d + w;
                queue.emplace(dist(v), v);
            }
        }
    }
    return dist;
}

double geodesic_distance(const MeshTopology& topo, const Points3& positions, int a, int b) {
    if (a < 0 || a >= topo.vertex_count || b < 0 || b >= topo.vertex_count)
        throw IndexOutOfRange("vertex index out of range");
    if (a == b) return 0.0;
    const VecX dist = geodesic_distances_from(topo, positions, a);
    if (!std::isfinite(dist(b)))
        throw DisconnectedVertices("no path between " + std::to_string(a) + " and " +
                                   std::to_string(b));
    return dist(b);
}

Points3 landmark_joints(const Points3& positions, const Landmarker& lm) {
    if (lm.matrix.cols() != positions.rows())
        throw ShapeMismatch("landmarker expects " + std::to_string(lm.matrix.cols()) +
                            " vertices, got " + std::to_string(positions.rows()));
    return lm.matrix * positions;
}

// ---------------------------------------------------------------------------
// Mesh file IO

void write_mesh_file(const std::string& path, const MeshTopology& topo, const Landmarker& lm) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.precision(17);
    out << "# template mesh: " << topo.vertex_count << " vertices, " << topo.faces.size()
        << " faces\n";
    for (int v = 0; v < topo.vertex_count; ++v) {
        out << "v " << topo.rest_positions(v, 0) << " " << topo.rest_positions(v, 1) << " "
            << topo.rest_positions(v, 2) << " " << topo.uv_atlas(v, 0) << " "
            << topo.uv_atlas(v, 1) << "\n";
    }
    for (const auto& f : topo.faces) out << "f " << f[0] << " " << f[1] << " " << f[2] << "\n";
    for (Eigen::Index j = 0; j < lm.matrix.rows(); ++j) {
        out << "lm " << j;
        for (Eigen::Index v = 0; v < lm.matrix.cols(); ++v) out << " " << lm.matrix(j, v);
        out << "\n";
    }
    if (!out) throw IoError("short write: " + path);
}

MeshFile read_mesh_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);

    std::vector<std::array<double, 5>> verts;
    std::vector<std::array<int, 3>> faces;
    std::vector<std::pair<int, std::vector<double>>> lm_rows;

    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            std::array<double, 5> rec{};
            for (double& x : rec)
                if (!(ls >> x)) throw IoError("bad vertex record in " + path);
            verts.push_back(rec);
        } else if (tag == "f") {
            std::array<int, 3> tri{};
            for (int& x : tri)
                if (!(ls >> x)) throw IoError("bad face record in " + path);
            faces.push_back(tri);
        } else if (tag == "lm") {
            int j = 0;
            if (!(ls >> j)) throw IoError("bad landmarker record in " + path);
            std::vector<double> row;
            double w = 0.0;
            while (ls >> w) row.push_back(w);
            lm_rows.emplace_back(j, std::move(row));
        } else {
            throw IoError("unknown record '" + tag + "' in " + path);
        }
    }

    const int v_count = static_cast<int>(verts.size());
    Points3 positions(v_count, 3);
    Points2 atlas(v_count, 2);
    for (int v = 0; v < v_count; ++v) {
        positions.row(v) << verts[v][0], verts[v][1], verts[v][2];
        atlas.row(v) << verts[v][3], verts[v][4];
    }

    MeshFile file;
    file.topology = build_topology(faces, v_count, atlas, positions);

    MatX lm = MatX::Zero(lm_rows.size(), v_count);
    for (const auto& [j, row] : lm_rows) {
        if (j < 0 || j >= static_cast<int>(lm_rows.size()) ||
            row.size() != static_cast<std::size_t>(v_count))
            throw IoError("bad landmarker row in " + path);
        for (int v = 0; v < v_count; ++v) lm(j, v) = row[v];
    }
    file.landmarker = lm_rows.empty() ? Landmarker{MatX::Zero(0, v_count)} : make_landmarker(lm);
    return file;
}

}  // namespace mpk
