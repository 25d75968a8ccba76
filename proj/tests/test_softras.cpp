#include <cmath>

#include "doctest.h"
#include "mpk/errors.hpp"
#include "mpk/geom2d.hpp"
#include "mpk/rng.hpp"
#include "mpk/softras.hpp"
#include "mpk/synth.hpp"
#include "test_util.hpp"

using namespace mpk;

namespace {

// Sheet projected to pixel coordinates for render tests.
struct RenderFixture {
    MeshTopology topo;
    Points2 verts;
};

RenderFixture sheet_fixture(double scale, double offset, std::uint64_t seed = 0,
                            double jitter = 0.0) {
    RenderFixture fx;
    fx.topo = make_grid_sheet(3, 3).topology;
    fx.verts.resize(fx.topo.vertex_count, 2);
    Rng rng(seed);
    for (int v = 0; v < fx.topo.vertex_count; ++v) {
        fx.verts(v, 0) = offset + scale * fx.topo.uv_atlas(v, 0) + jitter * rng.normal();
        fx.verts(v, 1) = offset + scale * fx.topo.uv_atlas(v, 1) + jitter * rng.normal();
    }
    return fx;
}

// All-pairs brute force oracle for the distance field convention.
Image distance_field_oracle(const Image& mask) {
    const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
    const auto inside = [&](int y, int x) { return mask(y, x) > 0.5; };
    std::vector<std::pair<int, int>> boundary;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!inside(y, x)) continue;
            const bool border = y == 0 || y == h - 1 || x == 0 || x == w - 1;
            if (border || !inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) ||
                !inside(y, x + 1))
                boundary.emplace_back(y, x);
        }
    Image out = Image::Zero(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!inside(y, x)) continue;
            double best = 1e30;
            for (const auto& [by, bx] : boundary) {
                const double d2 = double(y - by) * (y - by) + double(x - bx) * (x - bx);
                best = std::min(best, d2);
            }
            out(y, x) = std::sqrt(best) + 1.0;
        }
    return out;
}

}  // namespace

TEST_CASE("face_influence") {
    const Vec2 a(0, 0), b(10, 0), c(0, 10);
    SUBCASE("deep inside tends to one") {
        CHECK(face_influence(a, b, c, Vec2(2.5, 2.5), 0.5) > 0.999);
    }
    SUBCASE("boundary point is exactly one half") {
        CHECK(face_influence(a, b, c, Vec2(5.0, 0.0), 1.0) == doctest::Approx(0.5));
    }
    SUBCASE("far outside tends to zero") {
        CHECK(face_influence(a, b, c, Vec2(30.0, 30.0), 1.0) < 1e-9);
    }
    SUBCASE("degenerate triangle contributes nothing") {
        CHECK(face_influence(a, Vec2(5, 0), Vec2(9, 0), Vec2(1.0, 1.0), 1.0) == 0.0);
    }
}

TEST_CASE("render_soft_silhouette") {
    const RenderFixture fx = sheet_fixture(8.0, 1.5);
    const RenderGrid grid = crop_grid(12, 12);

    SUBCASE("zero visibility renders exactly nothing") {
        const SoftSilhouette sil = render_soft_silhouette(
            fx.verts, VecX::Zero(fx.topo.vertex_count), fx.topo, grid, 1.0);
        CHECK(sil.image.maxCoeff() == 0.0);
    }

    SUBCASE("full visibility and tiny sigma approximate the hard raster") {
        const RenderFixture big = sheet_fixture(16.0, 2.0);
        const RenderGrid big_grid = crop_grid(22, 22);
        const SoftSilhouette sil = render_soft_silhouette(
            big.verts, VecX::Ones(big.topo.vertex_count), big.topo, big_grid, 1e-3);
        const Image hard = rasterize_hard(big.verts, big.topo, big_grid);
        // The occupancy product dips along mesh edges (shared boundaries);
        // compare only pixels at least 2 px from every projected edge.
        const auto edge_distance = [&](const Vec2& p) {
            double best = 1e30;
            for (const auto& [i, j] : big.topo.edges)
                best = std::min(best,
                                closest_point_on_segment(p, big.verts.row(i), big.verts.row(j))
                                    .dist2);
            return std::sqrt(best);
        };
        double worst = 0.0;
        int compared = 0;
        for (int y = 0; y < grid.height; ++y)
            for (int x = 0; x < grid.width; ++x) {
                if (edge_distance(grid.pixel_center(x, y)) < 2.0) continue;
                ++compared;
                worst = std::max(worst, std::abs(sil.image(y, x) - hard(y, x)));
            }
        REQUIRE(compared > 10);
        CHECK(worst <= 1e-3);
    }

    SUBCASE("pixel values stay in [0,1] and w=1 matches the plain product") {
        Rng rng(67);
        const RenderFixture noisy = sheet_fixture(7.0, 2.0, 71, 0.8);
        const SoftSilhouette sil = render_soft_silhouette(
            noisy.verts, VecX::Ones(noisy.topo.vertex_count), noisy.topo, grid, 1.0);
        for (int y = 0; y < grid.height; ++y)
            for (int x = 0; x < grid.width; ++x) {
                CHECK(sil.image(y, x) >= 0.0);
                CHECK(sil.image(y, x) <= 1.0);
                // Reference: unmodified occupancy product over face influences.
                double survive = 1.0;
                for (const auto& tri : noisy.topo.faces) {
                    const double d = face_influence(noisy.verts.row(tri[0]),
                                                    noisy.verts.row(tri[1]),
                                                    noisy.verts.row(tri[2]),
                                                    grid.pixel_center(x, y), 1.0);
                    if (d >= 1e-6) survive *= 1.0 - d;
                }
                CHECK(sil.image(y, x) == doctest::Approx(1.0 - survive).epsilon(1e-12));
            }
    }

    SUBCASE("monotone in every single visibility weight") {
        Rng rng(73);
        for (int t = 0; t < 10; ++t) {
            const RenderFixture noisy = sheet_fixture(7.0, 2.0, 100 + t, 0.6);
            VecX vis(noisy.topo.vertex_count);
            for (int v = 0; v < noisy.topo.vertex_count; ++v) vis(v) = rng.uniform(0.1, 0.9);
            const SoftSilhouette base =
                render_soft_silhouette(noisy.verts, vis, noisy.topo, grid, 1.0);
            const int bump = rng.uniform_int(0, noisy.topo.vertex_count - 1);
            VecX vis2 = vis;
            vis2(bump) = std::min(1.0, vis(bump) + rng.uniform(0.01, 0.1));
            const SoftSilhouette more =
                render_soft_silhouette(noisy.verts, vis2, noisy.topo, grid, 1.0);
            CHECK((more.image - base.image).minCoeff() >= -1e-12);
        }
    }

    SUBCASE("analytic gradients match finite differences") {
        const RenderFixture noisy = sheet_fixture(7.0, 2.3, 79, 0.5);
        Rng rng(83);
        const int v_count = noisy.topo.vertex_count;
        VecX vis(v_count);
        for (int v = 0; v < v_count; ++v) vis(v) = rng.uniform(0.2, 0.9);
        Image upstream(grid.height, grid.width);
        for (int y = 0; y < grid.height; ++y)
            for (int x = 0; x < grid.width; ++x) upstream(y, x) = rng.normal();

        const RenderGrads grads = render_soft_silhouette_backward(noisy.verts, vis, noisy.topo,
                                                                  grid, 1.0, upstream);
        std::vector<double> params(v_count * 3);
        for (int v = 0; v < v_count; ++v) {
            params[2 * v] = noisy.verts(v, 0);
            params[2 * v + 1] = noisy.verts(v, 1);
            params[2 * v_count + v] = vis(v);
        }
        const auto eval = [&]() {
            Points2 verts(v_count, 2);
            VecX w(v_count);
            for (int v = 0; v < v_count; ++v) {
                verts(v, 0) = params[2 * v];
                verts(v, 1) = params[2 * v + 1];
                w(v) = params[2 * v_count + v];
            }
            const SoftSilhouette sil =
                render_soft_silhouette(verts, w, noisy.topo, grid, 1.0);
            return (sil.image.array() * upstream.array()).sum();
        };
        std::vector<double> analytic(params.size());
        for (int v = 0; v < v_count; ++v) {
            analytic[2 * v] = grads.vertices_2d(v, 0);
            analytic[2 * v + 1] = grads.vertices_2d(v, 1);
            analytic[2 * v_count + v] = grads.visibility(v);
        }
        CHECK(test::rel_error(analytic, test::fd_gradient(eval, params)) < 1e-3);
    }
}

TEST_CASE("distance_field") {
    SUBCASE("empty mask gives an empty field") {
        const DistanceField df = distance_field(Image::Zero(6, 7));
        CHECK(df.values.maxCoeff() == 0.0);
    }
    SUBCASE("single pixel is its own boundary") {
        Image mask = Image::Zero(5, 5);
        mask(2, 3) = 1.0;
        const DistanceField df = distance_field(mask);
        CHECK(df.values(2, 3) == doctest::Approx(1.0));
        CHECK(df.values.sum() == doctest::Approx(1.0));
    }
    SUBCASE("5x5 solid square center") {
        const Image mask = Image::Ones(5, 5);
        const DistanceField df = distance_field(mask);
        CHECK(df.values(2, 2) == doctest::Approx(3.0));
        CHECK(df.values(0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("matches the all-pairs brute force oracle exactly") {
        Rng rng(89);
        for (int t = 0; t < 10; ++t) {
            const int h = rng.uniform_int(4, 32), w = rng.uniform_int(4, 32);
            Image mask(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) mask(y, x) = rng.uniform() < 0.6 ? 1.0 : 0.0;
            const DistanceField df = distance_field(mask);
            const Image oracle = distance_field_oracle(mask);
            CHECK((df.values - oracle).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("silhouette_loss") {
    Image gt = Image::Zero(8, 8);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) gt(y, x) = 1.0;
    const DistanceField df = distance_field(gt);

    SoftSilhouette sil;
    sil.grid = crop_grid(8, 8);
    sil.sigma = 1.0;

    SUBCASE("perfect render: zero mse, boundary pays out the full field") {
        sil.image = gt;
        const SilhouetteLoss loss = silhouette_loss(sil, gt, df);
        CHECK(loss.mse.value == doctest::Approx(0.0));
        CHECK(loss.boundary.value == doctest::Approx(-df.values.sum()));
        CHECK(loss.combined == doctest::Approx(-df.values.sum()));
    }
    SUBCASE("empty render has zero boundary loss") {
        sil.image = Image::Zero(8, 8);
        CHECK(silhouette_loss(sil, gt, df).boundary.value == 0.0);
    }
    SUBCASE("boundary gradient is -D") {
        sil.image = Image::Constant(8, 8, 0.5);
        const SilhouetteLoss loss = silhouette_loss(sil, gt, df);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                CHECK(loss.boundary.gradients.at("silhouette").at(y, x) ==
                      doctest::Approx(-df.values(y, x)));
                CHECK(loss.boundary.gradients.at("silhouette").at(y, x) <= 0.0);
            }
    }
    SUBCASE("shape mismatch throws") {
        sil.image = Image::Zero(4, 4);
        CHECK_THROWS_AS(silhouette_loss(sil, gt, df), ShapeMismatch);
    }
}

TEST_CASE("pad_mask places the crop at the grid offset") {
    Image mask = Image::Zero(4, 4);
    mask(1, 2) = 1.0;
    const RenderGrid grid = padded_grid(4, 4, 0.5);
    CHECK(grid.width == 8);
    CHECK(grid.height == 8);
    const Image padded = pad_mask(mask, grid);
    CHECK(padded.sum() == doctest::Approx(1.0));
    CHECK(padded(1 + 2, 2 + 2) == 1.0);
}
