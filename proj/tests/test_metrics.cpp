#include <cmath>

#include "doctest.h"
#include "mpk/errors.hpp"
#include "mpk/metrics.hpp"
#include "mpk/rng.hpp"
#include "mpk/synth.hpp"
#include "test_util.hpp"

using namespace mpk;

namespace {

Points3 random_cloud(Rng& rng, int n, double scale = 1.0) {
    Points3 p(n, 3);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) p(i, a) = scale * rng.normal();
    return p;
}

Mat3 rot_z(double angle) {
    Mat3 r;
    r << std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle), 0, 0, 0, 1;
    return r;
}

}  // namespace

TEST_CASE("procrustes_align") {
    SUBCASE("identity on equal clouds") {
        Rng rng(3);
        const Points3 pts = random_cloud(rng, 8);
        const AlignmentTransform tf = procrustes_align(pts, pts);
        CHECK(tf.scale == doctest::Approx(1.0));
        CHECK((tf.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(tf.translation.norm() < 1e-9);
    }
    SUBCASE("recovers a constructed similarity transform") {
        Rng rng(5);
        const Points3 pred = random_cloud(rng, 10);
        const Mat3 r = rot_z(M_PI / 2);
        Points3 gt(10, 3);
        for (int i = 0; i < 10; ++i)
            gt.row(i) = (2.0 * (r * Vec3(pred.row(i))) + Vec3(1, 0, 0)).transpose();
        const AlignmentTransform tf = procrustes_align(pred, gt);
        CHECK(tf.scale == doctest::Approx(2.0));
        CHECK(alignment_residual(tf, pred, gt) < 1e-18);
        // Orthonormal with unit determinant.
        CHECK((tf.rotation.transpose() * tf.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <
              1e-9);
        CHECK(tf.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("reflection is resolved to a proper rotation") {
        Rng rng(7);
        const Points3 pred = random_cloud(rng, 6);
        Points3 gt = pred;
        gt.col(0) *= -1.0;  // mirrored target
        const AlignmentTransform tf = procrustes_align(pred, gt);
        CHECK(tf.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(alignment_residual(tf, pred, gt) > 1e-4);
    }
    SUBCASE("degenerate input throws") {
        Points3 line(4, 3);
        for (int i = 0; i < 4; ++i) line.row(i) << i, 0, 0;
        Rng rng(9);
        CHECK_THROWS_AS(procrustes_align(line, random_cloud(rng, 4)),
                        DegenerateConfiguration);
        CHECK_THROWS_AS(procrustes_align(random_cloud(rng, 2), random_cloud(rng, 2)),
                        DegenerateConfiguration);
    }
}

TEST_CASE("pose_metrics") {
    Rng rng(11);
    const Points3 joints = random_cloud(rng, 4, 0.5);
    const Points3 verts = random_cloud(rng, 12, 0.5);

    SUBCASE("perfect prediction scores zero") {
        const PoseMetrics m = pose_metrics(joints, joints, verts, verts, 0);
        CHECK(m.mpjpe == doctest::Approx(0.0));
        CHECK(m.pa_mpjpe == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(m.pve == doctest::Approx(0.0));
    }
    SUBCASE("translation cancels under root alignment") {
        Points3 moved_j = joints, moved_v = verts;
        for (int i = 0; i < 4; ++i) moved_j.row(i) += Vec3(10, 0, 0).transpose();
        for (int i = 0; i < 12; ++i) moved_v.row(i) += Vec3(10, 0, 0).transpose();
        const PoseMetrics m = pose_metrics(moved_j, joints, moved_v, verts, 0);
        CHECK(m.mpjpe == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(m.pa_mpjpe == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(m.pve == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("uniform scaling about the root") {
        const Vec3 root = joints.row(0);
        Points3 scaled = joints;
        for (int i = 0; i < 4; ++i)
            scaled.row(i) = (root + 1.1 * (Vec3(joints.row(i)) - root)).transpose();
        const PoseMetrics m = pose_metrics(scaled, joints, verts, verts, 0);
        double mean_dist = 0.0;
        for (int i = 0; i < 4; ++i) mean_dist += (Vec3(joints.row(i)) - root).norm() / 4.0;
        CHECK(m.mpjpe == doctest::Approx(0.1 * mean_dist).epsilon(1e-9));
        CHECK(m.pa_mpjpe == doctest::Approx(0.0).epsilon(1e-6));
    }
    SUBCASE("pa-mpjpe is invariant to similarity transforms of the prediction") {
        Rng rng2(13);
        const Points3 gt = random_cloud(rng2, 6);
        const Points3 pred = test::jitter(gt, rng2, 0.1);
        const PoseMetrics base = pose_metrics(pred, gt, verts, verts, 0);
        Points3 warped(6, 3);
        const Mat3 r = rot_z(0.7);
        for (int i = 0; i < 6; ++i)
            warped.row(i) = (3.0 * (r * Vec3(pred.row(i))) + Vec3(4, 5, 6)).transpose();
        const PoseMetrics moved = pose_metrics(warped, gt, verts, verts, 0);
        CHECK(moved.pa_mpjpe == doctest::Approx(base.pa_mpjpe).epsilon(1e-9));
    }
    SUBCASE("millimeter conversion multiplies through") {
        Points3 moved = joints;
        moved.row(1) += Vec3(0.5, 0, 0).transpose();
        const PoseMetrics unit = pose_metrics(moved, joints, verts, verts, 0, 1.0);
        const PoseMetrics mm = pose_metrics(moved, joints, verts, verts, 0, 1000.0);
        CHECK(mm.mpjpe == doctest::Approx(1000.0 * unit.mpjpe));
    }
}

TEST_CASE("keypoint_ap") {
    Rng rng(17);
    const int joints = 5;
    Points2 gt(joints, 2);
    for (int j = 0; j < joints; ++j) gt.row(j) << rng.uniform(0, 32), rng.uniform(0, 32);
    const double area = 300.0, kappa = 0.1;

    SUBCASE("perfect predictions score 1") {
        const ApAr r = keypoint_ap({gt, gt, gt}, {gt, gt, gt}, {area, area, area}, kappa);
        CHECK(r.ap == doctest::Approx(1.0));
        CHECK(r.ar == doctest::Approx(1.0));
    }
    SUBCASE("OKS exactly 0.7 passes half the thresholds") {
        // Displace every joint so exp(-d^2 / (2 area kappa^2)) = 0.7.
        const double d = std::sqrt(-2.0 * area * kappa * kappa * std::log(0.7));
        Points2 pred = gt;
        for (int j = 0; j < joints; ++j) pred(j, 0) += d;
        const ApAr r = keypoint_ap({pred}, {gt}, {area}, kappa);
        CHECK(r.ap == doctest::Approx(0.5));
    }
    SUBCASE("no instances throws") {
        CHECK_THROWS_AS(keypoint_ap({}, {}, {}, kappa), NoInstances);
    }
    SUBCASE("monotone degradation under growing noise") {
        Rng noise_rng(19);
        double last_ap = 1.1;
        for (const double sigma : {0.5, 3.0, 10.0}) {
            std::vector<Points2> preds, gts;
            std::vector<double> areas;
            for (int i = 0; i < 40; ++i) {
                Points2 pred = gt;
                for (int j = 0; j < joints; ++j) {
                    pred(j, 0) += sigma * noise_rng.normal();
                    pred(j, 1) += sigma * noise_rng.normal();
                }
                preds.push_back(pred);
                gts.push_back(gt);
                areas.push_back(area);
            }
            const ApAr r = keypoint_ap(preds, gts, areas, kappa);
            CHECK(r.ap <= last_ap + 1e-12);
            last_ap = r.ap;
        }
    }
}

TEST_CASE("densepose_ap") {
    const TemplateMesh tmpl = make_biped_template();
    const MeshTopology& topo = tmpl.topology;
    const MatX table = geodesic_table(topo, topo.rest_positions);
    const GeodesicFn geo = [&table](int a, int b) { return table(a, b); };
    const double kappa = 0.255;

    const auto one_hot_pair = [&](int face, int corner_gt, int corner_pred) {
        CorrespondencePair pair;
        pair.gt.bc.face = face;
        pair.gt.bc.weights = {0, 0, 0};
        pair.gt.bc.weights[corner_gt] = 1.0;
        pair.gt.pixel = Vec2(0, 0);
        pair.predicted.face = face;
        pair.predicted.weights = {0, 0, 0};
        pair.predicted.weights[corner_pred] = 1.0;
        return pair;
    };

    SUBCASE("perfect correspondences score 1") {
        std::vector<std::vector<CorrespondencePair>> instances(
            10, std::vector<CorrespondencePair>{one_hot_pair(3, 0, 0), one_hot_pair(9, 1, 1)});
        const ApAr r = densepose_ap(instances, topo, geo, kappa);
        CHECK(r.ap == doctest::Approx(1.0));
    }

    SUBCASE("error of kappa*sqrt(2 ln 2) gives GPS 0.5 and AP 0.1") {
        // Custom two-vertex-apart mesh with the exact edge length.
        const double g = kappa * std::sqrt(2.0 * std::log(2.0));
        Points2 atlas(3, 2);
        atlas << 0, 0, 1, 0, 0, 1;
        Points3 rest(3, 3);
        rest << 0, 0, 0, g, 0, 0, 0, 3 * g, 0;
        const MeshTopology tri = build_topology({{0, 1, 2}}, 3, atlas, rest);
        const MatX tri_table = geodesic_table(tri, tri.rest_positions);
        std::vector<std::vector<CorrespondencePair>> instances(
            4, std::vector<CorrespondencePair>{one_hot_pair(0, 0, 1)});
        const ApAr r = densepose_ap(instances, tri,
                                    [&tri_table](int a, int b) { return tri_table(a, b); },
                                    kappa);
        CHECK(r.ap == doctest::Approx(0.1));
    }

    SUBCASE("one ruined instance among ten drops AP to 0.9") {
        std::vector<std::vector<CorrespondencePair>> instances(
            10, std::vector<CorrespondencePair>{one_hot_pair(3, 0, 0)});
        // Hands sit far apart on the template; make one instance all wrong.
        const int left_hand_face = 4, right_hand_face = 17;
        CorrespondencePair wrong;
        wrong.gt.bc.face = left_hand_face;
        wrong.gt.bc.weights = {1, 0, 0};
        wrong.predicted.face = right_hand_face;
        wrong.predicted.weights = {1, 0, 0};
        const double g = table(snap_to_vertex(topo, wrong.gt.bc),
                               snap_to_vertex(topo, wrong.predicted));
        REQUIRE(std::exp(-g * g / (2 * kappa * kappa)) < 0.5);  // truly wrong
        instances[4] = {wrong};
        const ApAr r = densepose_ap(instances, topo, geo, kappa);
        CHECK(r.ap == doctest::Approx(0.9));
    }

    SUBCASE("instance order does not matter") {
        std::vector<std::vector<CorrespondencePair>> instances;
        for (int i = 0; i < 6; ++i)
            instances.push_back({one_hot_pair(i, 0, i % 3)});
        const ApAr forward = densepose_ap(instances, topo, geo, kappa);
        std::reverse(instances.begin(), instances.end());
        const ApAr backward = densepose_ap(instances, topo, geo, kappa);
        CHECK(forward.ap == doctest::Approx(backward.ap));
        CHECK(forward.ar == doctest::Approx(backward.ar));
    }

    SUBCASE("empty instance throws") {
        std::vector<std::vector<CorrespondencePair>> instances(1);
        CHECK_THROWS_AS(densepose_ap(instances, topo, geo, kappa), EmptyInstance);
        CHECK_THROWS_AS(densepose_ap({}, topo, geo, kappa), NoInstances);
    }
}

TEST_CASE("locate_pixel_on_mesh") {
    const TemplateMesh tmpl = make_biped_template();
    Points3 verts_px(tmpl.topology.vertex_count, 3);
    for (int v = 0; v < tmpl.topology.vertex_count; ++v)
        verts_px.row(v) << 10.0 * tmpl.topology.uv_atlas(v, 0) * 3.0,
            10.0 * tmpl.topology.uv_atlas(v, 1) * 3.0, 0.0;

    SUBCASE("pixel inside a face finds that face") {
        const auto& tri = tmpl.topology.faces[10];
        Vec2 inside = Vec2::Zero();
        for (int m = 0; m < 3; ++m)
            inside += Vec2(verts_px(tri[m], 0), verts_px(tri[m], 1)) / 3.0;
        const BarycentricCoord bc = locate_pixel_on_mesh(verts_px, tmpl.topology, inside);
        Vec2 recon = Vec2::Zero();
        const auto& tri2 = tmpl.topology.faces[bc.face];
        for (int m = 0; m < 3; ++m)
            recon += bc.weights[m] * Vec2(verts_px(tri2[m], 0), verts_px(tri2[m], 1));
        CHECK((recon - inside).norm() < 1e-9);
    }
    SUBCASE("far pixels snap to the nearest face") {
        const BarycentricCoord bc =
            locate_pixel_on_mesh(verts_px, tmpl.topology, Vec2(-50, -50));
        CHECK(bc.face >= 0);
        double sum = 0.0;
        for (double w : bc.weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(sum == doctest::Approx(1.0));
    }
}
