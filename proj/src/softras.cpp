#include "mpk/softras.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "mpk/errors.hpp"
#include "mpk/geom2d.hpp"

namespace mpk {

namespace {

constexpr double kInfluenceSkip = 1e-6;
constexpr double kDegenerateArea = 1e-12;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Clockwise perpendicular; gradient helper for 2D signed areas.
Vec2 perp_cw(const Vec2& w) { return Vec2(w.y(), -w.x()); }

struct FaceAtPixel {
    double influence = 0.0;  // D_j
    bool inside = false;
    BoundaryHit boundary{};
    ClampedBarycentric bary{};
    double w = 0.0;  // interpolated visibility
    bool degenerate = true;
};

FaceAtPixel eval_face(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& p, double sigma,
                      const double vis[3]) {
    FaceAtPixel out;
    if (std::abs(signed_area2(a, b, c)) < kDegenerateArea) return out;
    out.degenerate = false;
    out.inside = point_in_triangle(p, a, b, c);
    out.boundary = closest_boundary_point(p, a, b, c);
    const double delta = out.inside ? 1.0 : -1.0;
    out.influence = sigmoid(delta * out.boundary.dist2 / sigma);
    out.bary = clamped_barycentric(p, a, b, c);
    out.w = out.bary.weights[0] * vis[0] + out.bary.weights[1] * vis[1] +
            out.bary.weights[2] * vis[2];
    return out;
}

}  // namespace

RenderGrid crop_grid(int height, int width) { return RenderGrid{height, width, 0.0, 0.0}; }

RenderGrid padded_grid(int height, int width, double fraction) {
    const int px = static_cast<int>(std::ceil(fraction * width));
    const int py = static_cast<int>(std::ceil(fraction * height));
    return RenderGrid{height + 2 * py, width + 2 * px, -static_cast<double>(px),
                      -static_cast<double>(py)};
}

double face_influence(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& pixel,
                      double sigma) {
    if (sigma <= 0.0) throw InvalidConfig("sigma must be positive");
    if (std::abs(signed_area2(a, b, c)) < kDegenerateArea) return 0.0;
    const bool inside = point_in_triangle(pixel, a, b, c);
    const double d2 = closest_boundary_point(pixel, a, b, c).dist2;
    return sigmoid((inside ? 1.0 : -1.0) * d2 / sigma);
}

SoftSilhouette render_soft_silhouette(const Points2& vertices_2d, const VecX& visibility,
                                      const MeshTopology& topo, const RenderGrid& grid,
                                      double sigma) {
    if (vertices_2d.rows() != topo.vertex_count || visibility.size() != topo.vertex_count)
        throw ShapeMismatch("vertices and visibility must both have V entries");
    if (sigma <= 0.0) throw InvalidConfig("sigma must be positive");

    SoftSilhouette out;
    out.sigma = sigma;
    out.grid = grid;
    out.image.setZero(grid.height, grid.width);

    for (int y = 0; y < grid.height; ++y) {
        for (int x = 0; x < grid.width; ++x) {
            const Vec2 p = grid.pixel_center(x, y);
            double survive = 1.0;
            for (const auto& tri : topo.faces) {
                const Vec2 a = vertices_2d.row(tri[0]), b = vertices_2d.row(tri[1]),
                           c = vertices_2d.row(tri[2]);
                const double vis[3] = {visibility(tri[0]), visibility(tri[1]),
                                       visibility(tri[2])};
                const FaceAtPixel fa = eval_face(a, b, c, p, sigma, vis);
                if (fa.degenerate || fa.influence < kInfluenceSkip) continue;
                survive *= 1.0 - fa.w * fa.influence;
            }
            out.image(y, x) = 1.0 - survive;
        }
    }
    return out;
}

namespace {

// d(squared segment distance)/d(endpoints) with the clamped parameter; the
// envelope theorem removes the dependence through the optimal parameter.
void segment_dist2_grads(const Vec2& p, const Vec2& u, const Vec2& v, double t, Vec2& du,
                         Vec2& dv) {
    if (t <= 0.0) {
        du = 2.0 * (u - p);
        dv = Vec2::Zero();
    } else if (t >= 1.0) {
        du = Vec2::Zero();
        dv = 2.0 * (v - p);
    } else {
        const Vec2 r = p - u - t * (v - u);
        du = -2.0 * (1.0 - t) * r;
        dv = -2.0 * t * r;
    }
}

// Gradients of the (possibly clamped) barycentric weights wrt the triangle
// corners, contracted against dL/dweights. p is fixed.
void barycentric_grads(const Vec2& p, const Vec2 corners[3], const ClampedBarycentric& cb,
                       const double dL_dw[3], Vec2 out[3]) {
    out[0] = out[1] = out[2] = Vec2::Zero();
    if (cb.region == 2) return;  // snapped to a corner: locally constant

    if (cb.region == 1) {
        // Closest point on an edge: beta_i = 1-t, beta_j = t.
        const int i = cb.feature, j = (cb.feature + 1) % 3;
        const Vec2 u = corners[i], v = corners[j];
        const Vec2 e = v - u;
        const double len2 = e.squaredNorm();
        if (len2 < 1e-20) return;
        const Vec2 g = p - u;
        const Vec2 ds_du = ((2.0 * cb.t - 1.0) * e - g) / len2;
        const Vec2 ds_dv = (g - 2.0 * cb.t * e) / len2;
        const double dL_dt = dL_dw[j] - dL_dw[i];
        out[i] = dL_dt * ds_du;
        out[j] = dL_dt * ds_dv;
        return;
    }

    // Interior: beta_m = area2(sub_m) / area2(a,b,c).
    const Vec2 a = corners[0], b = corners[1], c = corners[2];
    const double total = signed_area2(a, b, c);
    const double areas[3] = {signed_area2(p, b, c), signed_area2(a, p, c),
                             signed_area2(a, b, p)};
    // dT/dcorner, cyclic rule grad_x area2(x,y,z) = perp_cw(y - z).
    const Vec2 dT[3] = {perp_cw(b - c), perp_cw(c - a), perp_cw(a - b)};
    // dareas[m]/dcorner[k]; p replaces corner m in the sub-triangle.
    Vec2 dA[3][3];
    for (auto& row : dA)
        for (auto& g : row) g = Vec2::Zero();
    dA[0][1] = perp_cw(c - p);
    dA[0][2] = perp_cw(p - b);
    dA[1][0] = perp_cw(p - c);
    dA[1][2] = perp_cw(a - p);
    dA[2][0] = perp_cw(b - p);
    dA[2][1] = perp_cw(p - a);

    for (int m = 0; m < 3; ++m) {
        const double beta = areas[m] / total;
        for (int k = 0; k < 3; ++k)
            out[k] += dL_dw[m] * (dA[m][k] - beta * dT[k]) / total;
    }
}

}  // namespace

RenderGrads render_soft_silhouette_backward(const Points2& vertices_2d, const VecX& visibility,
                                            const MeshTopology& topo, const RenderGrid& grid,
                                            double sigma, const Image& dL_dimage) {
    if (vertices_2d.rows() != topo.vertex_count || visibility.size() != topo.vertex_count)
        throw ShapeMismatch("vertices and visibility must both have V entries");
    if (dL_dimage.rows() != grid.height || dL_dimage.cols() != grid.width)
        throw ShapeMismatch("image gradient must match the render grid");

    RenderGrads grads;
    grads.vertices_2d = Points2::Zero(topo.vertex_count, 2);
    grads.visibility = VecX::Zero(topo.vertex_count);

    std::vector<FaceAtPixel> active;
    std::vector<int> active_face;
    std::vector<double> factors, prefix, suffix;

    for (int y = 0; y < grid.height; ++y) {
        for (int x = 0; x < grid.width; ++x) {
            const double upstream = dL_dimage(y, x);
            if (upstream == 0.0) continue;
            const Vec2 p = grid.pixel_center(x, y);

            active.clear();
            active_face.clear();
            factors.clear();
            for (std::size_t f = 0; f < topo.faces.size(); ++f) {
                const auto& tri = topo.faces[f];
                const Vec2 a = vertices_2d.row(tri[0]), b = vertices_2d.row(tri[1]),
                           c = vertices_2d.row(tri[2]);
                const double vis[3] = {visibility(tri[0]), visibility(tri[1]),
                                       visibility(tri[2])};
                const FaceAtPixel fa = eval_face(a, b, c, p, sigma, vis);
                if (fa.degenerate || fa.influence < kInfluenceSkip) continue;
                active.push_back(fa);
                active_face.push_back(static_cast<int>(f));
                factors.push_back(1.0 - fa.w * fa.influence);
            }
            if (active.empty()) continue;

            const std::size_t n = active.size();
            prefix.assign(n + 1, 1.0);
            suffix.assign(n + 1, 1.0);
            for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] * factors[i];
            for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] * factors[i];

            for (std::size_t i = 0; i < n; ++i) {
                const FaceAtPixel& fa = active[i];
                const auto& tri = topo.faces[active_face[i]];
                // I = 1 - prod factors; d I/d t_i = prod of the others.
                const double dI_dt = prefix[i] * suffix[i + 1];
                const double dL_dt = upstream * dI_dt;

                const double dL_dD = dL_dt * fa.w;
                const double dL_dwj = dL_dt * fa.influence;

                // Visibility path (plus the barycentric dependence below).
                for (int m = 0; m < 3; ++m)
                    grads.visibility(tri[m]) += dL_dwj * fa.bary.weights[m];

                const Vec2 corners[3] = {vertices_2d.row(tri[0]), vertices_2d.row(tri[1]),
                                         vertices_2d.row(tri[2])};

                // Influence through the boundary distance.
                const double delta = fa.inside ? 1.0 : -1.0;
                const double dD_dd2 = fa.influence * (1.0 - fa.influence) * delta / sigma;
                const int e0 = fa.boundary.edge, e1 = (fa.boundary.edge + 1) % 3;
                Vec2 du, dv;
                segment_dist2_grads(p, corners[e0], corners[e1], fa.boundary.t, du, dv);
                grads.vertices_2d.row(tri[e0]) += (dL_dD * dD_dd2 * du).transpose();
                grads.vertices_2d.row(tri[e1]) += (dL_dD * dD_dd2 * dv).transpose();

                // Interpolated visibility through the barycentric weights.
                const double dL_dbeta[3] = {dL_dwj * visibility(tri[0]),
                                            dL_dwj * visibility(tri[1]),
                                            dL_dwj * visibility(tri[2])};
                Vec2 bary_grads[3];
                barycentric_grads(p, corners, fa.bary, dL_dbeta, bary_grads);
                for (int m = 0; m < 3; ++m)
                    grads.vertices_2d.row(tri[m]) += bary_grads[m].transpose();
            }
        }
    }
    return grads;
}

Image rasterize_hard(const Points2& vertices_2d, const MeshTopology& topo,
                     const RenderGrid& grid) {
    if (vertices_2d.rows() != topo.vertex_count)
        throw ShapeMismatch("vertices must have V rows");
    Image mask = Image::Zero(grid.height, grid.width);
    for (const auto& tri : topo.faces) {
        const Vec2 a = vertices_2d.row(tri[0]), b = vertices_2d.row(tri[1]),
                   c = vertices_2d.row(tri[2]);
        if (std::abs(signed_area2(a, b, c)) < kDegenerateArea) continue;
        const double xmin = std::min({a.x(), b.x(), c.x()}), xmax = std::max({a.x(), b.x(), c.x()});
        const double ymin = std::min({a.y(), b.y(), c.y()}), ymax = std::max({a.y(), b.y(), c.y()});
        const int x0 = std::max(0, static_cast<int>(std::floor(xmin - grid.x0)));
        const int x1 = std::min(grid.width - 1, static_cast<int>(std::ceil(xmax - grid.x0)));
        const int y0 = std::max(0, static_cast<int>(std::floor(ymin - grid.y0)));
        const int y1 = std::min(grid.height - 1, static_cast<int>(std::ceil(ymax - grid.y0)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (point_in_triangle(grid.pixel_center(x, y), a, b, c)) mask(y, x) = 1.0;
    }
    return mask;
}

namespace {

// Felzenszwalb-Huttenlocher 1D squared distance transform.
void dt1d(std::vector<double>& f) {
    const int n = static_cast<int>(f.size());
    std::vector<double> d(n);
    std::vector<int> v(n, 0);
    std::vector<double> z(n + 1);
    int k = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
    f = d;
}

}  // namespace

DistanceField distance_field(const Image& mask) {
    const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
    if (h == 0 || w == 0) throw InvalidConfig("mask must be nonempty");

    const auto inside = [&](int y, int x) { return mask(y, x) > 0.5; };
    const auto is_boundary = [&](int y, int x) {
        if (!inside(y, x)) return false;
        if (y == 0 || y == h - 1 || x == 0 || x == w - 1) return true;
        return !inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1);
    };

    constexpr double kInf = 1e18;
    MatX sq(h, w);
    bool any_boundary = false;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const bool b = is_boundary(y, x);
            any_boundary |= b;
            sq(y, x) = b ? 0.0 : kInf;
        }

    DistanceField field;
    field.values = Image::Zero(h, w);
    if (!any_boundary) return field;  // empty mask

    std::vector<double> line;
    for (int x = 0; x < w; ++x) {
        line.assign(h, 0.0);
        for (int y = 0; y < h; ++y) line[y] = sq(y, x);
        dt1d(line);
        for (int y = 0; y < h; ++y) sq(y, x) = line[y];
    }
    for (int y = 0; y < h; ++y) {
        line.assign(w, 0.0);
        for (int x = 0; x < w; ++x) line[x] = sq(y, x);
        dt1d(line);
        for (int x = 0; x < w; ++x) sq(y, x) = line[x];
    }

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (inside(y, x)) field.values(y, x) = std::sqrt(sq(y, x)) + 1.0;
    return field;
}

SilhouetteLoss silhouette_loss(const SoftSilhouette& silhouette, const Image& gt_mask,
                               const DistanceField& df, double mse_weight,
                               double boundary_weight) {
    const Image& img = silhouette.image;
    if (img.rows() != gt_mask.rows() || img.cols() != gt_mask.cols() ||
        img.rows() != df.values.rows() || img.cols() != df.values.cols())
        throw ShapeMismatch("silhouette, mask and distance field must share dims");

    const double n = static_cast<double>(img.size());
    SilhouetteLoss out;

    Tensor mse_grad({static_cast<std::size_t>(img.rows()), static_cast<std::size_t>(img.cols())});
    Tensor bnd_grad(mse_grad.dims);
    double mse = 0.0, bnd = 0.0;
    for (Eigen::Index y = 0; y < img.rows(); ++y) {
        for (Eigen::Index x = 0; x < img.cols(); ++x) {
            const double diff = img(y, x) - gt_mask(y, x);
            mse += diff * diff;
            mse_grad.at(y, x) = 2.0 * diff / n;
            bnd -= df.values(y, x) * img(y, x);
            bnd_grad.at(y, x) = -df.values(y, x);
        }
    }
    out.mse.value = mse / n;
    out.mse.gradients["silhouette"] = std::move(mse_grad);
    out.boundary.value = bnd;
    out.boundary.gradients["silhouette"] = std::move(bnd_grad);
    out.combined = mse_weight * out.mse.value + boundary_weight * out.boundary.value;
    return out;
}

Image pad_mask(const Image& mask, const RenderGrid& grid) {
    Image padded = Image::Zero(grid.height, grid.width);
    const int ox = static_cast<int>(std::lround(-grid.x0));
    const int oy = static_cast<int>(std::lround(-grid.y0));
    for (Eigen::Index y = 0; y < mask.rows(); ++y)
        for (Eigen::Index x = 0; x < mask.cols(); ++x) {
            const int py = static_cast<int>(y) + oy, px = static_cast<int>(x) + ox;
            if (py >= 0 && py < grid.height && px >= 0 && px < grid.width)
                padded(py, px) = mask(y, x);
        }
    return padded;
}

}  // namespace mpk
