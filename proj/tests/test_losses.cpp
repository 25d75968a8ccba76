#include <cmath>

#include "doctest.h"
#include "mpk/errors.hpp"
#include "mpk/losses.hpp"
#include "mpk/rng.hpp"
#include "mpk/synth.hpp"
#include "test_util.hpp"

using namespace mpk;

namespace {

MeshTopology one_face_mesh() {
    Points2 atlas(3, 2);
    atlas << 0.1, 0.1, 0.9, 0.1, 0.1, 0.9;
    Points3 rest(3, 3);
    rest << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    return build_topology({{0, 1, 2}}, 3, atlas, rest);
}

// Two triangles over four vertices; used for hand-checkable geometry.
MeshTopology quad_mesh(Points3* rest_out = nullptr) {
    Points2 atlas(4, 2);
    atlas << 0, 0, 1, 0, 0, 1, 1, 1;
    Points3 rest(4, 3);
    rest << 0, 0, 0, 2, 0, 0, 0, 2, 0, 2, 2, 1;
    if (rest_out) *rest_out = rest;
    return build_topology({{0, 1, 2}, {1, 3, 2}}, 4, atlas, rest);
}

}  // namespace

TEST_CASE("barycentric_cross_entropy") {
    const MeshTopology topo = one_face_mesh();
    SurfaceAnnotation ann;
    ann.pixel = Vec2(1.0, 1.0);
    ann.bc.face = 0;

    SUBCASE("matching distribution attains the entropy floor") {
        ann.bc.weights = {0.2, 0.3, 0.5};
        VecX scores(3);
        for (int m = 0; m < 3; ++m) scores(m) = std::log(ann.bc.weights[m]);
        const LossValue loss = barycentric_cross_entropy(scores, ann, topo);
        const double entropy = -(0.2 * std::log(0.2) + 0.3 * std::log(0.3) + 0.5 * std::log(0.5));
        CHECK(loss.value == doctest::Approx(entropy).epsilon(1e-9));
        CHECK(loss.value == doctest::Approx(1.0297).epsilon(1e-4));
        // Minimum at q = p: gradient vanishes.
        CHECK(loss.gradients.at("scores").to_vector().cwiseAbs().maxCoeff() < 1e-9);
    }

    SUBCASE("matched one-hot annotation is free") {
        ann.bc.weights = {1.0, 0.0, 0.0};
        VecX scores = VecX::Zero(3);
        scores(0) = 40.0;
        const LossValue loss = barycentric_cross_entropy(scores, ann, topo);
        CHECK(loss.value < 1e-6);
    }

    SUBCASE("gradient at uniform scores is 1/V - p") {
        ann.bc.weights = {0.6, 0.3, 0.1};
        const LossValue loss = barycentric_cross_entropy(VecX::Zero(3), ann, topo);
        const VecX g = loss.gradients.at("scores").to_vector();
        CHECK(g(0) == doctest::Approx(1.0 / 3 - 0.6).epsilon(1e-12));
        CHECK(g(1) == doctest::Approx(1.0 / 3 - 0.3).epsilon(1e-12));
        CHECK(g(2) == doctest::Approx(1.0 / 3 - 0.1).epsilon(1e-12));
    }

    SUBCASE("gradient matches central differences") {
        Rng rng(41);
        ann.bc.weights = {0.25, 0.45, 0.3};
        std::vector<double> scores(3);
        for (double& s : scores) s = rng.normal();
        const auto eval = [&]() {
            const VecX s = Eigen::Map<const VecX>(scores.data(), 3);
            return barycentric_cross_entropy(s, ann, topo).value;
        };
        const VecX s = Eigen::Map<const VecX>(scores.data(), 3);
        const LossValue loss = barycentric_cross_entropy(s, ann, topo);
        CHECK(test::rel_error(loss.gradients.at("scores").data,
                              test::fd_gradient(eval, scores)) < 1e-6);
    }

    SUBCASE("non-finite scores throw") {
        VecX s = VecX::Zero(3);
        s(1) = std::numeric_limits<double>::infinity();
        ann.bc.weights = {1.0, 0.0, 0.0};
        CHECK_THROWS_AS(barycentric_cross_entropy(s, ann, topo), NonFiniteInput);
    }
}

TEST_CASE("uv_consistency_loss") {
    const MeshTopology topo = one_face_mesh();
    HeatmapStack hs = make_heatmap_stack(6, 6, 3, 1.0);
    // Channels peaked hard at (0,0), (4,0), (0,4).
    const int peaks[3][2] = {{0, 0}, {4, 0}, {0, 4}};
    for (int v = 0; v < 3; ++v) hs.at(peaks[v][0], peaks[v][1], v) = 40.0;

    SurfaceAnnotation ann;
    ann.bc.face = 0;
    ann.bc.weights = {0.25, 0.5, 0.25};

    SUBCASE("exact reconstruction is free") {
        ann.pixel = Vec2(2.0, 1.0);
        CHECK(uv_consistency_loss(hs, ann, topo).value < 1e-5);
    }
    SUBCASE("one pixel off costs one pixel") {
        ann.pixel = Vec2(3.0, 1.0);
        CHECK(uv_consistency_loss(hs, ann, topo).value == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("invariant to the unused channels") {
        ann.pixel = Vec2(2.5, 1.5);
        // A 4-vertex mesh whose annotated face uses vertices 0,1,2 only.
        Points2 atlas(4, 2);
        atlas << 0.1, 0.1, 0.9, 0.1, 0.1, 0.9, 0.9, 0.9;
        Points3 rest(4, 3);
        rest << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0;
        const MeshTopology topo4 = build_topology({{0, 1, 2}, {1, 3, 2}}, 4, atlas, rest);
        Rng rng(43);
        HeatmapStack a = make_heatmap_stack(6, 6, 4, 1.0);
        for (double& s : a.scores.data) s = rng.normal();
        HeatmapStack b = a;
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) b.at(x, y, 3) = rng.normal();  // scramble channel 3
        const double la = uv_consistency_loss(a, ann, topo4).value;
        const double lb = uv_consistency_loss(b, ann, topo4).value;
        CHECK(la == doctest::Approx(lb).epsilon(1e-12));
    }
    SUBCASE("gradient matches central differences on random stacks") {
        Rng rng(47);
        for (int t = 0; t < 5; ++t) {
            HeatmapStack stack = make_heatmap_stack(6, 6, 3, 1.0);
            for (double& s : stack.scores.data) s = rng.normal();
            ann.pixel = Vec2(rng.uniform(0.0, 5.0), rng.uniform(0.0, 5.0));
            const auto eval = [&]() { return uv_consistency_loss(stack, ann, topo).value; };
            const LossValue loss = uv_consistency_loss(stack, ann, topo);
            CHECK(test::rel_error(loss.gradients.at("heatmaps").data,
                                  test::fd_gradient(eval, stack.scores.data)) < 1e-4);
        }
    }
}

TEST_CASE("visibility_bce") {
    SUBCASE("confident correct prediction costs little") {
        VecX w(1);
        w << 0.999;
        const LossValue loss = visibility_bce(w, {VisLabel::Visible});
        CHECK(loss.value == doctest::Approx(-std::log(0.999)).epsilon(1e-9));
        CHECK(loss.value == doctest::Approx(0.001).epsilon(1e-2));
    }
    SUBCASE("uncertain prediction costs ln 2") {
        VecX w(2);
        w << 0.5, 0.5;
        const LossValue loss = visibility_bce(w, {VisLabel::Visible, VisLabel::Invisible});
        CHECK(loss.value == doctest::Approx(std::log(2.0)));
    }
    SUBCASE("all unlabeled throws") {
        VecX w(3);
        w << 0.5, 0.5, 0.5;
        CHECK_THROWS_AS(
            visibility_bce(w, {VisLabel::Unlabeled, VisLabel::Unlabeled, VisLabel::Unlabeled}),
            NoLabeledVertices);
    }
    SUBCASE("unlabeled vertices get zero gradient") {
        VecX w(3);
        w << 0.3, 0.7, 0.6;
        const LossValue loss =
            visibility_bce(w, {VisLabel::Visible, VisLabel::Unlabeled, VisLabel::Invisible});
        const VecX g = loss.gradients.at("visibility").to_vector();
        CHECK(g(1) == 0.0);
        CHECK(g(0) != 0.0);
        CHECK(g(2) != 0.0);
    }
}

TEST_CASE("geometric_losses") {
    Points3 rest;
    const MeshTopology topo = quad_mesh(&rest);

    SUBCASE("perfect prediction is free") {
        const GeometricLosses g = geometric_losses(rest, rest, topo);
        CHECK(g.vertex.value == doctest::Approx(0.0));
        CHECK(g.edge.value == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(g.normal.value == doctest::Approx(0.0));
    }
    SUBCASE("doubling the mesh distorts edges, not normals") {
        const Points3 pred = 2.0 * rest;
        const GeometricLosses g = geometric_losses(pred, rest, topo);
        double mean_edge = 0.0;
        for (const auto& [i, j] : topo.edges)
            mean_edge += (rest.row(i) - rest.row(j)).norm() / topo.edges.size();
        CHECK(g.edge.value == doctest::Approx(mean_edge).epsilon(1e-9));
        CHECK(g.normal.value == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("translation moves only the vertex loss") {
        Points3 pred = rest;
        const Vec3 t(0.3, -0.2, 0.9);
        for (int v = 0; v < 4; ++v) pred.row(v) += t.transpose();
        const GeometricLosses g = geometric_losses(pred, rest, topo);
        CHECK(g.vertex.value == doctest::Approx(t.squaredNorm()).epsilon(1e-12));
        CHECK(g.edge.value == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(g.normal.value == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("normal loss is scale invariant") {
        Rng rng(53);
        const Points3 pred = test::jitter(rest, rng, 0.2);
        const GeometricLosses a = geometric_losses(pred, rest, topo);
        const GeometricLosses b = geometric_losses(Points3(3.7 * pred), rest, topo);
        CHECK(a.normal.value == doctest::Approx(b.normal.value).epsilon(1e-9));
    }
    SUBCASE("per-vertex normal option also passes finite differences") {
        Rng rng(59);
        GeometricLossConfig cfg;
        cfg.normal = NormalLossKind::PerVertexArea;
        const Points3 gt = test::jitter(rest, rng, 0.05);
        Points3 pred = test::jitter(rest, rng, 0.15);
        std::vector<double> params(pred.data(), pred.data() + pred.size());
        const auto eval = [&]() {
            Points3 p(4, 3);
            std::copy(params.begin(), params.end(), p.data());
            return geometric_losses(p, gt, topo, cfg).normal.value;
        };
        const GeometricLosses g = geometric_losses(pred, gt, topo, cfg);
        CHECK(test::rel_error(g.normal.gradients.at("pred").data,
                              test::fd_gradient(eval, params)) < 1e-4);
    }
    SUBCASE("squared edge option") {
        GeometricLossConfig cfg;
        cfg.edge = EdgeLossKind::L2;
        const Points3 pred = 2.0 * rest;
        double mean_sq = 0.0;
        for (const auto& [i, j] : topo.edges) {
            const double len = (rest.row(i) - rest.row(j)).norm();
            mean_sq += len * len / topo.edges.size();
        }
        CHECK(geometric_losses(pred, rest, topo, cfg).edge.value ==
              doctest::Approx(mean_sq).epsilon(1e-9));
    }
    SUBCASE("shape mismatch") {
        Points3 bad(3, 3);
        bad.setZero();
        CHECK_THROWS_AS(geometric_losses(bad, rest, topo), ShapeMismatch);
    }
}

TEST_CASE("joint_localization_loss") {
    Points3 verts(4, 3);
    verts << 0, 0, 0, 2, 0, 0, 0, 2, 0, 2, 2, 0;
    MatX w = MatX::Zero(1, 4);
    w(0, 0) = 0.5;
    w(0, 1) = 0.5;
    const Landmarker lm = make_landmarker(w);

    SUBCASE("exact joints are free") {
        const MatX gt = landmark_joints(verts, lm);
        CHECK(joint_localization_loss(verts, gt, lm, JointLossMode::ThreeD).value ==
              doctest::Approx(0.0));
    }
    SUBCASE("moving one support vertex by (2,0,0) costs 1") {
        const MatX gt = landmark_joints(verts, lm);
        Points3 moved = verts;
        moved(0, 0) += 2.0;
        CHECK(joint_localization_loss(moved, gt, lm, JointLossMode::ThreeD).value ==
              doctest::Approx(1.0));
    }
    SUBCASE("gradient is confined to supporting vertices") {
        MatX gt = landmark_joints(verts, lm);
        gt.array() += 0.5;
        const LossValue loss = joint_localization_loss(verts, gt, lm, JointLossMode::ThreeD);
        const Tensor& g = loss.gradients.at("pred");
        for (int a = 0; a < 3; ++a) {
            CHECK(g.at(2, a) == 0.0);
            CHECK(g.at(3, a) == 0.0);
        }
        CHECK(std::abs(g.at(0, 0)) > 0.0);
    }
    SUBCASE("projected mode compares pixels") {
        Camera cam;
        cam.scale = 10.0;
        cam.principal = Vec2(16, 16);
        const Points3 j3 = landmark_joints(verts, lm);
        MatX gt2(1, 2);
        gt2.row(0) = cam.project(Vec3(j3.row(0))).transpose();
        CHECK(joint_localization_loss(verts, gt2, lm, JointLossMode::Projected2D, cam).value ==
              doctest::Approx(0.0));
        Points3 moved = verts;
        moved(0, 2) += 5.0;  // depth does not project
        CHECK(joint_localization_loss(moved, gt2, lm, JointLossMode::Projected2D, cam).value ==
              doctest::Approx(0.0));
    }
}

TEST_CASE("total_loss") {
    const auto zero_components = []() {
        std::map<std::string, LossValue> comps;
        for (const std::string& name : total_loss_components()) comps[name] = LossValue{};
        return comps;
    };

    SUBCASE("all zero components give zero") {
        CHECK(total_loss(zero_components()).value == 0.0);
    }
    SUBCASE("visibility weight is 10") {
        auto comps = zero_components();
        comps["vis"].value = 0.2;
        CHECK(total_loss(comps).value == doctest::Approx(2.0));
    }
    SUBCASE("vertex and normal weights are 0.1") {
        auto comps = zero_components();
        comps["v"].value = 1.0;
        comps["n"].value = 1.0;
        CHECK(total_loss(comps).value == doctest::Approx(0.2));
    }
    SUBCASE("silhouette weights are 100 and 1") {
        auto comps = zero_components();
        comps["sil_l2"].value = 0.25;
        comps["sil_bnd"].value = -3.0;
        CHECK(total_loss(comps).value == doctest::Approx(22.0));
    }
    SUBCASE("linear in the components") {
        Rng rng(61);
        auto comps = zero_components();
        for (auto& [name, lv] : comps) lv.value = rng.normal();
        auto doubled = comps;
        for (auto& [name, lv] : doubled) lv.value *= 2.0;
        CHECK(total_loss(doubled).value == doctest::Approx(2.0 * total_loss(comps).value));
    }
    SUBCASE("missing component throws") {
        auto comps = zero_components();
        comps.erase("cons");
        CHECK_THROWS_AS(total_loss(comps), MissingComponent);
    }
    SUBCASE("shared gradients are summed with their weights") {
        auto comps = zero_components();
        Tensor g({2});
        g.at(0) = 1.0;
        g.at(1) = -2.0;
        comps["v"].gradients["pred"] = g;
        comps["e"].gradients["pred"] = g;
        const LossValue total = total_loss(comps);
        // 0.1 * g + 1.0 * g
        CHECK(total.gradients.at("pred").at(0) == doctest::Approx(1.1));
        CHECK(total.gradients.at("pred").at(1) == doctest::Approx(-2.2));
    }
}
