#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mpk/types.hpp"

namespace mpk {

// Convex weights on one face of the template.
struct BarycentricCoord {
    int face = -1;
    std::array<double, 3> weights{1.0, 0.0, 0.0};
};

// Immutable low-poly template: faces, deduplicated edges, a single-chart
// per-vertex UV atlas in [0,1]^2, rest positions and vertex->face adjacency.
struct MeshTopology {
    int vertex_count = 0;
    std::vector<std::array<int, 3>> faces;
    std::vector<std::pair<int, int>> edges;   // (lo, hi), each pair once
    Points2 uv_atlas;                         // V x 2
    Points3 rest_positions;                   // V x 3
    std::vector<std::vector<int>> face_adjacency;  // per vertex, incident faces
};

// Fixed linear map from mesh vertices to skeleton joints; rows are convex.
struct Landmarker {
    MatX matrix;  // J x V, nonnegative, rows sum to 1
    int joint_count() const { return static_cast<int>(matrix.rows()); }
};

MeshTopology build_topology(const std::vector<std::array<int, 3>>& faces, int vertex_count,
                            const Points2& uv_atlas, const Points3& rest_positions);

void validate_barycentric(const BarycentricCoord& bc, const MeshTopology& topo);

Landmarker make_landmarker(const MatX& weights);

// Sum of bc.weights[m] * attr.row(face vertex m); attr is V x K.
VecX interpolate_on_face(const MeshTopology& topo, const BarycentricCoord& bc, const MatX& attr);

Vec2 interpolate_uv(const MeshTopology& topo, const BarycentricCoord& bc);

struct UvLocation {
    BarycentricCoord bc;
    bool snapped = false;  // true when the query fell outside the atlas
};

// Locate a surface coordinate in the UV atlas. Out-of-atlas queries snap to
// the closest point of the nearest UV triangle and are flagged.
UvLocation uv_to_barycentric(const MeshTopology& topo, const Vec2& uv);

// Shortest path over the edge graph with Euclidean edge weights; an
// approximation to the exact polyhedral geodesic, adequate for the low-poly
// templates this library works with.
double geodesic_distance(const MeshTopology& topo, const Points3& positions, int a, int b);

// Distances from source to every vertex (same approximation).
VecX geodesic_distances_from(const MeshTopology& topo, const Points3& positions, int source);

Points3 landmark_joints(const Points3& positions, const Landmarker& lm);

// Text mesh file: `v x y z u v`, `f i j k` (0-based), `lm j w0 ... w{V-1}`,
// '#' comments, whitespace separated.
struct MeshFile {
    MeshTopology topology;
    Landmarker landmarker;  // may be empty (J = 0)
};

void write_mesh_file(const std::string& path, const MeshTopology& topo, const Landmarker& lm);
MeshFile read_mesh_file(const std::string& path);

}  // namespace mpk
