#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "mpk/errors.hpp"
#include "mpk/mesh.hpp"
#include "mpk/rng.hpp"
#include "mpk/synth.hpp"
#include "test_util.hpp"

using namespace mpk;

namespace {

MeshTopology single_triangle() {
    Points2 atlas(3, 2);
    atlas << 0.1, 0.1, 0.9, 0.1, 0.1, 0.9;
    Points3 rest(3, 3);
    rest << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    return build_topology({{0, 1, 2}}, 3, atlas, rest);
}

}  // namespace

TEST_CASE("build_topology: single triangle") {
    const MeshTopology topo = single_triangle();
    CHECK(topo.edges.size() == 3);
    for (int v = 0; v < 3; ++v) {
        REQUIRE(topo.face_adjacency[v].size() == 1);
        CHECK(topo.face_adjacency[v][0] == 0);
    }
}

TEST_CASE("build_topology: shared edge deduplicated") {
    Points2 atlas(4, 2);
    atlas << 0, 0, 1, 0, 0, 1, 1, 1;
    Points3 rest(4, 3);
    rest << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
    const MeshTopology topo = build_topology({{0, 1, 2}, {1, 3, 2}}, 4, atlas, rest);
    CHECK(topo.edges.size() == 5);  // 6 face edges, (1,2) shared
}

TEST_CASE("build_topology: errors") {
    Points2 atlas(3, 2);
    atlas.setZero();
    Points3 rest(3, 3);
    rest.setZero();
    CHECK_THROWS_AS(build_topology({{0, 0, 1}}, 3, atlas, rest), DegenerateFace);
    CHECK_THROWS_AS(build_topology({{0, 1, 3}}, 3, atlas, rest), IndexOutOfRange);
    Points2 short_atlas(2, 2);
    short_atlas.setZero();
    CHECK_THROWS_AS(build_topology({{0, 1, 2}}, 3, short_atlas, rest), AtlasLengthMismatch);
}

TEST_CASE("interpolate_on_face") {
    const MeshTopology topo = single_triangle();
    MatX attr(3, 2);
    attr << 0, 0, 3, 0, 0, 3;

    BarycentricCoord bc;
    bc.face = 0;

    SUBCASE("one-hot picks the vertex") {
        bc.weights = {1.0, 0.0, 0.0};
        const VecX out = interpolate_on_face(topo, bc, attr);
        CHECK(out(0) == doctest::Approx(0.0));
        CHECK(out(1) == doctest::Approx(0.0));
    }
    SUBCASE("centroid averages") {
        bc.weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};
        const VecX out = interpolate_on_face(topo, bc, attr);
        CHECK(out(0) == doctest::Approx(1.0));
        CHECK(out(1) == doctest::Approx(1.0));
    }
    SUBCASE("weighted UV combination") {
        MatX uvs(3, 2);
        uvs << 0, 0, 1, 0, 0, 1;
        bc.weights = {0.25, 0.5, 0.25};
        const VecX out = interpolate_on_face(topo, bc, uvs);
        CHECK(out(0) == doctest::Approx(0.5));
        CHECK(out(1) == doctest::Approx(0.25));
    }
    SUBCASE("invalid weights rejected") {
        bc.weights = {0.7, 0.7, -0.4};
        CHECK_THROWS_AS(interpolate_on_face(topo, bc, attr), InvalidBarycentric);
    }
    SUBCASE("linearity in the attribute") {
        Rng rng(7);
        bc.weights = {0.2, 0.5, 0.3};
        MatX a(3, 2), b(3, 2);
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 2; ++k) {
                a(i, k) = rng.normal();
                b(i, k) = rng.normal();
            }
        const VecX lhs = interpolate_on_face(topo, bc, a + b);
        const VecX rhs = interpolate_on_face(topo, bc, a) + interpolate_on_face(topo, bc, b);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("uv_to_barycentric") {
    const TemplateMesh tmpl = make_biped_template();
    const MeshTopology& topo = tmpl.topology;

    SUBCASE("vertex hit is one-hot") {
        const int k = 7;
        const UvLocation loc = uv_to_barycentric(topo, Vec2(topo.uv_atlas.row(k)));
        CHECK_FALSE(loc.snapped);
        const auto& tri = topo.faces[loc.bc.face];
        double w_at_k = 0.0;
        for (int m = 0; m < 3; ++m)
            if (tri[m] == k) w_at_k = loc.bc.weights[m];
        CHECK(w_at_k == doctest::Approx(1.0).epsilon(1e-9));
    }

    SUBCASE("face centroid") {
        const int f = 5;
        const auto& tri = topo.faces[f];
        const Vec2 centroid = (Vec2(topo.uv_atlas.row(tri[0])) + Vec2(topo.uv_atlas.row(tri[1])) +
                               Vec2(topo.uv_atlas.row(tri[2]))) / 3.0;
        const UvLocation loc = uv_to_barycentric(topo, centroid);
        CHECK_FALSE(loc.snapped);
        CHECK(loc.bc.face == f);
        for (int m = 0; m < 3; ++m)
            CHECK(loc.bc.weights[m] == doctest::Approx(1.0 / 3).epsilon(1e-9));
    }

    SUBCASE("outside the atlas snaps to the nearest triangle") {
        const Vec2 query(-0.2, -0.3);
        const UvLocation loc = uv_to_barycentric(topo, query);
        CHECK(loc.snapped);
        // Brute-force oracle: densely sample every UV triangle.
        double best = 1e30;
        for (const auto& tri : topo.faces) {
            const Vec2 a = topo.uv_atlas.row(tri[0]), b = topo.uv_atlas.row(tri[1]),
                       c = topo.uv_atlas.row(tri[2]);
            for (int i = 0; i <= 40; ++i)
                for (int j = 0; j <= 40 - i; ++j) {
                    const double u = i / 40.0, v = j / 40.0;
                    const Vec2 p = a + u * (b - a) + v * (c - a);
                    best = std::min(best, (p - query).norm());
                }
        }
        const Vec2 snapped = interpolate_uv(topo, loc.bc);
        CHECK((snapped - query).norm() <= best + 1e-6);
    }

    SUBCASE("round trip through the atlas is the identity inside") {
        Rng rng(11);
        for (int trial = 0; trial < 50; ++trial) {
            BarycentricCoord bc;
            bc.face = rng.uniform_int(0, static_cast<int>(topo.faces.size()) - 1);
            const double su = std::sqrt(rng.uniform(0.05, 0.95));
            const double r2 = rng.uniform(0.05, 0.95);
            bc.weights = {1.0 - su, su * (1.0 - r2), su * r2};
            const Vec2 uv = interpolate_uv(topo, bc);
            const UvLocation loc = uv_to_barycentric(topo, uv);
            CHECK((interpolate_uv(topo, loc.bc) - uv).norm() < 1e-9);
        }
    }

    SUBCASE("empty topology") {
        MeshTopology empty;
        CHECK_THROWS_AS(uv_to_barycentric(empty, Vec2(0.5, 0.5)), EmptyTopology);
    }
}

TEST_CASE("geodesic_distance") {
    SUBCASE("identity and hand path") {
        // Two triangles along a line: the only 0->2 path runs through vertex 1.
        Points2 atlas(4, 2);
        atlas << 0, 0, 0.4, 0, 0.8, 0, 0.4, 1;
        Points3 rest(4, 3);
        rest << 0, 0, 0, 1, 0, 0, 2, 0, 0, 1, 5, 0;
        const MeshTopology topo = build_topology({{0, 1, 3}, {1, 2, 3}}, 4, atlas, rest);
        CHECK(geodesic_distance(topo, rest, 1, 1) == 0.0);
        CHECK(geodesic_distance(topo, rest, 0, 2) == doctest::Approx(2.0));
    }

    SUBCASE("symmetry and triangle inequality on the template") {
        const TemplateMesh tmpl = make_biped_template();
        const MeshTopology& topo = tmpl.topology;
        const int v_count = topo.vertex_count;
        REQUIRE(v_count <= 50);
        MatX table(v_count, v_count);
        for (int v = 0; v < v_count; ++v)
            table.row(v) = geodesic_distances_from(topo, topo.rest_positions, v).transpose();
        Rng rng(3);
        for (int t = 0; t < 100; ++t) {
            const int a = rng.uniform_int(0, v_count - 1), b = rng.uniform_int(0, v_count - 1);
            CHECK(table(a, b) == doctest::Approx(table(b, a)));
        }
        for (int a = 0; a < v_count; ++a)
            for (int b = 0; b < v_count; ++b)
                for (int c = 0; c < v_count; ++c)
                    CHECK(table(a, b) <= table(a, c) + table(c, b) + 1e-12);
    }

    SUBCASE("disconnected vertices throw") {
        Points2 atlas(4, 2);
        atlas.setZero();
        Points3 rest(4, 3);
        rest << 0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 5, 5;
        const MeshTopology topo = build_topology({{0, 1, 2}}, 4, atlas, rest);
        CHECK_THROWS_AS(geodesic_distance(topo, rest, 0, 3), DisconnectedVertices);
    }
}

TEST_CASE("landmark_joints") {
    Points3 pos(3, 3);
    pos << 0, 0, 0, 2, 0, 0, 0, 4, 0;

    SUBCASE("one-hot row picks the vertex") {
        MatX w = MatX::Zero(1, 3);
        w(0, 2) = 1.0;
        const Points3 joints = landmark_joints(pos, make_landmarker(w));
        CHECK(joints(0, 1) == doctest::Approx(4.0));
    }
    SUBCASE("uniform pair gives the midpoint") {
        MatX w = MatX::Zero(1, 3);
        w(0, 0) = 0.5;
        w(0, 1) = 0.5;
        const Points3 joints = landmark_joints(pos, make_landmarker(w));
        CHECK(joints(0, 0) == doctest::Approx(1.0));
        CHECK(joints(0, 1) == doctest::Approx(0.0));
    }
    SUBCASE("no joints yields empty output") {
        const Landmarker lm{MatX::Zero(0, 3)};
        CHECK(landmark_joints(pos, lm).rows() == 0);
    }
    SUBCASE("shape mismatch") {
        MatX w = MatX::Zero(1, 4);
        w(0, 0) = 1.0;
        CHECK_THROWS_AS(landmark_joints(pos, Landmarker{w}), ShapeMismatch);
    }
    SUBCASE("row sums validated") {
        MatX w = MatX::Zero(1, 3);
        w(0, 0) = 0.7;
        CHECK_THROWS_AS(make_landmarker(w), InvalidConfig);
        w(0, 0) = -0.5;
        w(0, 1) = 1.5;
        CHECK_THROWS_AS(make_landmarker(w), InvalidConfig);
    }
}

TEST_CASE("mesh file round trip") {
    const TemplateMesh tmpl = make_biped_template();
    const std::string path =
        (std::filesystem::temp_directory_path() / "mpk_mesh_rt.txt").string();
    write_mesh_file(path, tmpl.topology, tmpl.landmarker);
    const MeshFile read = read_mesh_file(path);
    REQUIRE(read.topology.vertex_count == tmpl.topology.vertex_count);
    CHECK(read.topology.faces == tmpl.topology.faces);
    CHECK(read.topology.edges == tmpl.topology.edges);
    CHECK((read.topology.uv_atlas - tmpl.topology.uv_atlas).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((read.topology.rest_positions - tmpl.topology.rest_positions).cwiseAbs().maxCoeff() <
          1e-15);
    CHECK((read.landmarker.matrix - tmpl.landmarker.matrix).cwiseAbs().maxCoeff() < 1e-15);
    std::filesystem::remove(path);
}
