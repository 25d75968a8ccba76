#include "mpk/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"
#include "mpk/errors.hpp"
#include "mpk/geom2d.hpp"
#include "mpk/image_io.hpp"
#include "mpk/rng.hpp"
#include "mpk/softras.hpp"

namespace mpk {

namespace {

using nlohmann::json;

// Builds a triangulated sheet from an occupancy grid of unit cells. Vertices
// sit on occupied cell corners; UVs normalize the lattice; Z is a smooth bump
// toward the viewer.
TemplateMesh build_sheet(const std::vector<std::string>& cells, double spacing, double bump,
                         const std::vector<std::vector<std::pair<int, int>>>& joint_sets) {
    const int cell_rows = static_cast<int>(cells.size());
    const int cell_cols = static_cast<int>(cells.front().size());
    const int lat_rows = cell_rows + 1, lat_cols = cell_cols + 1;

    std::map<std::pair<int, int>, int> index;
    const auto vertex_at = [&](int r, int c) {
        const auto it = index.find({r, c});
        return it == index.end() ? -1 : it->second;
    };
    for (int r = 0; r < cell_rows; ++r)
        for (int c = 0; c < cell_cols; ++c) {
            if (cells[r][c] != 'X') continue;
            for (int dr = 0; dr <= 1; ++dr)
                for (int dc = 0; dc <= 1; ++dc)
                    index.emplace(std::make_pair(r + dr, c + dc),
                                  static_cast<int>(index.size()));
        }

    // Re-number in lattice order so indices are stable and readable.
    {
        int next = 0;
        for (auto& [key, idx] : index) idx = next++;
    }

    const int v_count = static_cast<int>(index.size());
    Points3 positions(v_count, 3);
    Points2 atlas(v_count, 2);
    const double cx = cell_cols / 2.0, cy = cell_rows / 2.0;
    for (const auto& [rc, idx] : index) {
        const auto [r, c] = rc;
        const double u = static_cast<double>(c) / (lat_cols - 1);
        const double v = static_cast<double>(r) / (lat_rows - 1);
        atlas.row(idx) << u, v;
        positions.row(idx) << (c - cx) * spacing, (cy - r) * spacing,
            bump * std::sin(M_PI * u) * std::sin(M_PI * v);
    }

    std::vector<std::array<int, 3>> faces;
    for (int r = 0; r < cell_rows; ++r)
        for (int c = 0; c < cell_cols; ++c) {
            if (cells[r][c] != 'X') continue;
            const int tl = vertex_at(r, c), tr = vertex_at(r, c + 1);
            const int bl = vertex_at(r + 1, c), br = vertex_at(r + 1, c + 1);
            faces.push_back({tl, bl, br});
            faces.push_back({tl, br, tr});
        }

    TemplateMesh tmpl;
    tmpl.topology = build_topology(faces, v_count, atlas, positions);

    MatX lm = MatX::Zero(joint_sets.size(), v_count);
    for (std::size_t j = 0; j < joint_sets.size(); ++j) {
        for (const auto& [r, c] : joint_sets[j]) {
            const int idx = vertex_at(r, c);
            if (idx < 0) throw InvalidConfig("joint references an unoccupied lattice corner");
            lm(j, idx) = 1.0;
        }
        lm.row(j) /= lm.row(j).sum();
    }
    tmpl.landmarker = make_landmarker(lm);
    return tmpl;
}

}  // namespace

TemplateMesh make_biped_template() {
    const std::vector<std::string> cells = {
        "...X...",  // head
        "...X...",
        "XXXXXXX",  // arms + shoulders
        "..XXX..",  // torso
        "..XXX..",
        "..XXX..",
        "..X.X..",  // legs
        "..X.X..",
        "..X.X..",
    };
    const std::vector<std::vector<std::pair<int, int>>> joints = {
        {{3, 3}, {3, 4}},                  // 0 root (sternum)
        {{0, 3}, {0, 4}, {1, 3}, {1, 4}},  // 1 head
        {{2, 0}, {3, 0}},                  // 2 left hand
        {{2, 7}, {3, 7}},                  // 3 right hand
        {{6, 2}, {6, 3}},                  // 4 left hip
        {{6, 4}, {6, 5}},                  // 5 right hip
        {{9, 2}, {9, 3}},                  // 6 left foot
        {{9, 4}, {9, 5}},                  // 7 right foot
    };
    return build_sheet(cells, 0.2, 0.25, joints);
}

TemplateMesh make_grid_sheet(int rows, int cols, double spacing, double bump) {
    if (rows < 2 || cols < 2) throw InvalidConfig("grid sheet needs at least 2x2 vertices");
    const std::vector<std::string> cells(rows - 1, std::string(cols - 1, 'X'));
    // Single joint at the sheet's top-left corner keeps the landmarker valid.
    return build_sheet(cells, spacing, bump, {{{0, 0}}});
}

MeshTopology midpoint_subdivide(const MeshTopology& topo) {
    std::map<std::pair<int, int>, int> midpoint;
    int next = topo.vertex_count;
    for (const auto& [u, v] : topo.edges) midpoint[{u, v}] = next++;

    const int v_count = next;
    Points3 positions(v_count, 3);
    Points2 atlas(v_count, 2);
    positions.topRows(topo.vertex_count) = topo.rest_positions;
    atlas.topRows(topo.vertex_count) = topo.uv_atlas;
    for (const auto& [edge, idx] : midpoint) {
        positions.row(idx) =
            0.5 * (topo.rest_positions.row(edge.first) + topo.rest_positions.row(edge.second));
        atlas.row(idx) = 0.5 * (topo.uv_atlas.row(edge.first) + topo.uv_atlas.row(edge.second));
    }

    const auto mid = [&](int a, int b) { return midpoint.at(std::minmax(a, b)); };
    std::vector<std::array<int, 3>> faces;
    faces.reserve(topo.faces.size() * 4);
    for (const auto& tri : topo.faces) {
        const int ab = mid(tri[0], tri[1]), bc = mid(tri[1], tri[2]), ca = mid(tri[2], tri[0]);
        faces.push_back({tri[0], ab, ca});
        faces.push_back({tri[1], bc, ab});
        faces.push_back({tri[2], ca, bc});
        faces.push_back({ab, bc, ca});
    }
    return build_topology(faces, v_count, atlas, positions);
}

Vec3 DeformationField::apply(const Vec3& p) const {
    Vec3 q = linear * p + translation;
    for (const Wave& w : waves)
        q[w.target_axis] += w.amplitude * std::sin(w.frequency * p[w.source_axis] + w.phase);
    return q;
}

Points3 DeformationField::apply(const Points3& pts) const {
    Points3 out(pts.rows(), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        out.row(i) = apply(Vec3(pts.row(i))).transpose();
    return out;
}

DeformationField random_deformation(Rng& rng, double amplitude) {
    DeformationField field;
    const double rz = rng.uniform(-amplitude, amplitude);
    const double rx = rng.uniform(-amplitude / 3.0, amplitude / 3.0);
    const double ry = rng.uniform(-amplitude / 3.0, amplitude / 3.0);
    const double scale = 1.0 + rng.uniform(-amplitude / 4.0, amplitude / 4.0);

    Mat3 Rz, Rx, Ry;
    Rz << std::cos(rz), -std::sin(rz), 0, std::sin(rz), std::cos(rz), 0, 0, 0, 1;
    Rx << 1, 0, 0, 0, std::cos(rx), -std::sin(rx), 0, std::sin(rx), std::cos(rx);
    Ry << std::cos(ry), 0, std::sin(ry), 0, 1, 0, -std::sin(ry), 0, std::cos(ry);
    field.linear = scale * (Rz * Rx * Ry);

    for (int target = 0; target < 3; ++target) {
        DeformationField::Wave w;
        w.target_axis = target;
        w.source_axis = (target + 1 + rng.uniform_int(0, 1)) % 3;
        w.amplitude = amplitude * rng.uniform(0.1, 0.3);
        w.frequency = rng.uniform(1.0, 3.0);
        w.phase = rng.uniform(0.0, 2.0 * M_PI);
        field.waves.push_back(w);
    }
    return field;
}

DeformationBasis make_deformation_basis(int count, std::uint64_t seed) {
    Rng rng(seed);
    DeformationBasis basis;
    for (int m = 0; m < count; ++m) {
        DeformationBasis::BasisField f;
        f.direction = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
        f.wave_vector = Vec3(rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5),
                             rng.uniform(0.5, 2.5));
        f.phase = rng.uniform(0.0, 2.0 * M_PI);
        basis.fields.push_back(f);
    }
    return basis;
}

Points3 DeformationBasis::apply(const Points3& rest, const VecX& coefficients) const {
    if (coefficients.size() != static_cast<Eigen::Index>(fields.size()))
        throw ShapeMismatch("one coefficient per basis field expected");
    Points3 out = rest;
    for (Eigen::Index i = 0; i < rest.rows(); ++i) {
        const Vec3 p(rest.row(i));
        for (std::size_t m = 0; m < fields.size(); ++m) {
            const BasisField& f = fields[m];
            out.row(i) += (coefficients(m) * std::sin(f.wave_vector.dot(p) + f.phase) *
                           f.direction).transpose();
        }
    }
    return out;
}

bool face_front_facing(const Points3& positions, const std::array<int, 3>& tri) {
    const Vec3 a(positions.row(tri[0])), b(positions.row(tri[1])), c(positions.row(tri[2]));
    return (b - a).cross(c - a).z() > 0.0;
}

namespace {

Image rasterize_front_mask(const Scene& scene) {
    // Hard raster of front-facing faces only; back faces are invisible surface.
    MeshTopology front = scene.topology;
    front.faces.clear();
    for (const auto& tri : scene.topology.faces)
        if (face_front_facing(scene.gt_vertices_3d, tri)) front.faces.push_back(tri);
    Points2 proj(scene.topology.vertex_count, 2);
    for (int v = 0; v < scene.topology.vertex_count; ++v)
        proj.row(v) << scene.gt_vertices_px(v, 0), scene.gt_vertices_px(v, 1);
    return rasterize_hard(proj, front,
                          crop_grid(static_cast<int>(scene.gt_mask.rows()),
                                    static_cast<int>(scene.gt_mask.cols())));
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneConfig& config) {
    if (config.height < 8 || config.width < 8) throw InvalidConfig("crop too small");
    if (config.annotation_count < 0) throw InvalidConfig("negative annotation count");
    if (config.heatmap_std <= 0.0 || config.alpha <= 0.0)
        throw InvalidConfig("heatmap std and alpha must be positive");
    if (config.margin <= 0.0 || config.margin >= 0.5)
        throw InvalidConfig("margin must be in (0, 0.5)");

    Rng rng(seed);
    Rng rng_pose = rng.fork(1);
    Rng rng_ann = rng.fork(2);

    const TemplateMesh tmpl = make_biped_template();

    Scene scene;
    scene.seed = seed;
    scene.topology = tmpl.topology;
    scene.landmarker = tmpl.landmarker;
    scene.unit_to_mm = config.unit_to_mm;

    const DeformationField field = random_deformation(rng_pose, config.pose_amplitude);
    scene.gt_vertices_3d = field.apply(tmpl.topology.rest_positions);
    scene.gt_joints = landmark_joints(scene.gt_vertices_3d, tmpl.landmarker);

    // Frame the deformed body inside the crop with a margin.
    const double min_x = scene.gt_vertices_3d.col(0).minCoeff();
    const double max_x = scene.gt_vertices_3d.col(0).maxCoeff();
    const double min_y = scene.gt_vertices_3d.col(1).minCoeff();
    const double max_y = scene.gt_vertices_3d.col(1).maxCoeff();
    const double span_x = std::max(max_x - min_x, 1e-6);
    const double span_y = std::max(max_y - min_y, 1e-6);
    scene.camera.scale = std::min((config.width - 1) * (1.0 - 2.0 * config.margin) / span_x,
                                  (config.height - 1) * (1.0 - 2.0 * config.margin) / span_y);
    scene.camera.principal =
        Vec2((config.width - 1) / 2.0 - scene.camera.scale * (min_x + max_x) / 2.0,
             (config.height - 1) / 2.0 - scene.camera.scale * (min_y + max_y) / 2.0);
    scene.camera.root_depth = 4.0 * config.width;

    const double root_z = scene.gt_joints(scene.root_joint(), 2);
    scene.gt_vertices_px.resize(tmpl.topology.vertex_count, 3);
    for (int v = 0; v < tmpl.topology.vertex_count; ++v) {
        const Vec2 xy = scene.camera.project(Vec3(scene.gt_vertices_3d.row(v)));
        scene.gt_vertices_px.row(v) << xy.x(), xy.y(),
            scene.camera.scale * (scene.gt_vertices_3d(v, 2) - root_z);
    }
    scene.gt_joints_px.resize(tmpl.landmarker.joint_count(), 3);
    for (int j = 0; j < tmpl.landmarker.joint_count(); ++j) {
        const Vec2 xy = scene.camera.project(Vec3(scene.gt_joints.row(j)));
        scene.gt_joints_px.row(j) << xy.x(), xy.y(),
            scene.camera.scale * (scene.gt_joints(j, 2) - root_z);
    }

    scene.gt_mask = Image::Zero(config.height, config.width);
    scene.gt_mask = rasterize_front_mask(scene);

    // Visibility labels: front-facing and inside the crop.
    scene.visibility_labels.assign(tmpl.topology.vertex_count, VisLabel::Invisible);
    for (int v = 0; v < tmpl.topology.vertex_count; ++v) {
        const double x = scene.gt_vertices_px(v, 0), y = scene.gt_vertices_px(v, 1);
        const bool in_crop = x >= 0.0 && x <= config.width - 1 && y >= 0.0 &&
                             y <= config.height - 1;
        if (!in_crop) continue;
        for (int f : tmpl.topology.face_adjacency[v]) {
            if (face_front_facing(scene.gt_vertices_3d, tmpl.topology.faces[f])) {
                scene.visibility_labels[v] = VisLabel::Visible;
                break;
            }
        }
    }

    // Heatmaps: quadratic log-scores, so softmax(alpha * S_v) is a discrete
    // Gaussian of the configured std centered on the projected vertex.
    scene.gt_heatmaps = make_heatmap_stack(config.height, config.width,
                                           tmpl.topology.vertex_count, config.alpha);
    const double inv_two_var = 1.0 / (2.0 * config.heatmap_std * config.heatmap_std);
    for (int v = 0; v < tmpl.topology.vertex_count; ++v) {
        const double px = scene.gt_vertices_px(v, 0), py = scene.gt_vertices_px(v, 1);
        for (int y = 0; y < config.height; ++y)
            for (int x = 0; x < config.width; ++x) {
                const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
                scene.gt_heatmaps.at(x, y, v) = -d2 * inv_two_var / config.alpha;
            }
    }

    scene.annotations = sample_annotations(scene, config.annotation_count, rng_ann.next_u64());
    return scene;
}

std::vector<SurfaceAnnotation> sample_annotations(const Scene& scene, int n,
                                                  std::uint64_t seed) {
    if (n == 0) return {};
    if (n < 0) throw InvalidConfig("negative annotation count");

    const MeshTopology& topo = scene.topology;
    Points2 proj(topo.vertex_count, 2);
    for (int v = 0; v < topo.vertex_count; ++v)
        proj.row(v) << scene.gt_vertices_px(v, 0), scene.gt_vertices_px(v, 1);

    // Front-facing faces weighted by projected area.
    std::vector<int> front;
    std::vector<double> cumulative;
    double total = 0.0;
    for (std::size_t f = 0; f < topo.faces.size(); ++f) {
        if (!face_front_facing(scene.gt_vertices_3d, topo.faces[f])) continue;
        const auto& tri = topo.faces[f];
        const double area2 = signed_area2(proj.row(tri[0]), proj.row(tri[1]), proj.row(tri[2]));
        if (area2 <= 1e-12) continue;
        front.push_back(static_cast<int>(f));
        total += area2;
        cumulative.push_back(total);
    }
    if (front.empty()) throw NoVisibleSurface("no front-facing faces project to the crop");

    // Painter's test: the face actually seen at the sampled point.
    const auto top_face_at = [&](const Vec2& p) {
        int best = -1;
        double best_depth = -std::numeric_limits<double>::infinity();
        for (std::size_t f = 0; f < topo.faces.size(); ++f) {
            const auto& tri = topo.faces[f];
            const Vec2 a = proj.row(tri[0]), b = proj.row(tri[1]), c = proj.row(tri[2]);
            if (std::abs(signed_area2(a, b, c)) < 1e-12) continue;
            if (!point_in_triangle(p, a, b, c)) continue;
            const double depth = (scene.gt_vertices_px(tri[0], 2) +
                                  scene.gt_vertices_px(tri[1], 2) +
                                  scene.gt_vertices_px(tri[2], 2)) / 3.0;
            if (depth > best_depth) {
                best_depth = depth;
                best = static_cast<int>(f);
            }
        }
        return best;
    };

    Rng rng(seed);
    std::vector<SurfaceAnnotation> anns;
    anns.reserve(n);
    const int max_attempts = 200 * n + 1000;
    int attempts = 0;
    while (static_cast<int>(anns.size()) < n) {
        if (++attempts > max_attempts)
            throw NoVisibleSurface("rejection sampling failed to find visible surface points");
        const double pick = rng.uniform(0.0, total);
        const std::size_t k = std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
                              cumulative.begin();
        const int f = front[std::min(k, front.size() - 1)];
        const auto& tri = topo.faces[f];

        const double su = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        const std::array<double, 3> beta = {1.0 - su, su * (1.0 - r2), su * r2};

        Vec2 pixel = Vec2::Zero();
        for (int m = 0; m < 3; ++m) pixel += beta[m] * Vec2(proj.row(tri[m]));

        // Keep only samples whose pixel cell is on the mask and whose face is
        // the one actually visible there.
        const int iy = static_cast<int>(std::lround(pixel.y()));
        const int ix = static_cast<int>(std::lround(pixel.x()));
        if (iy < 0 || iy >= scene.gt_mask.rows() || ix < 0 || ix >= scene.gt_mask.cols())
            continue;
        if (scene.gt_mask(iy, ix) < 0.5) continue;
        if (top_face_at(pixel) != f) continue;

        SurfaceAnnotation ann;
        ann.pixel = pixel;
        ann.bc.face = f;
        ann.bc.weights = beta;
        anns.push_back(ann);
    }
    return anns;
}

VecX annotation_sharp_scores(const SurfaceAnnotation& ann, const MeshTopology& topo) {
    validate_barycentric(ann.bc, topo);
    VecX scores = VecX::Constant(topo.vertex_count, -40.0);
    const auto& tri = topo.faces[ann.bc.face];
    for (int m = 0; m < 3; ++m)
        scores(tri[m]) = std::max(std::log(std::max(ann.bc.weights[m], 1e-300)), -40.0);
    return scores;
}

// ---------------------------------------------------------------------------
// Serialization

void write_scene(const std::string& dir, const Scene& scene) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    write_mesh_file(dir + "/mesh.txt", scene.topology, scene.landmarker);
    write_tensor(dir + "/heatmaps.mpt", scene.gt_heatmaps.scores);
    write_tensor(dir + "/vertices_px.mpt", Tensor::from_points(scene.gt_vertices_px));
    write_tensor(dir + "/vertices_3d.mpt", Tensor::from_points(scene.gt_vertices_3d));
    write_tensor(dir + "/joints.mpt", Tensor::from_points(scene.gt_joints));
    write_tensor(dir + "/joints_px.mpt", Tensor::from_points(scene.gt_joints_px));
    write_mask_pgm(dir + "/mask.pgm", scene.gt_mask);

    json j;
    j["seed"] = scene.seed;
    j["unit_to_mm"] = scene.unit_to_mm;
    j["alpha"] = scene.gt_heatmaps.alpha;
    j["camera"] = {{"scale", scene.camera.scale},
                   {"principal", {scene.camera.principal.x(), scene.camera.principal.y()}},
                   {"root_depth", scene.camera.root_depth}};
    j["height"] = scene.gt_mask.rows();
    j["width"] = scene.gt_mask.cols();
    json anns = json::array();
    for (const SurfaceAnnotation& a : scene.annotations) {
        anns.push_back({{"pixel", {a.pixel.x(), a.pixel.y()}},
                        {"face", a.bc.face},
                        {"weights", {a.bc.weights[0], a.bc.weights[1], a.bc.weights[2]}}});
    }
    j["annotations"] = anns;
    json vis = json::array();
    for (const VisLabel l : scene.visibility_labels) vis.push_back(static_cast<int>(l));
    j["visibility"] = vis;

    std::ofstream out(dir + "/scene.json");
    if (!out) throw IoError("cannot write " + dir + "/scene.json");
    out << j.dump(2) << "\n";
}

Scene read_scene(const std::string& dir) {
    std::ifstream in(dir + "/scene.json");
    if (!in) throw IoError("cannot read " + dir + "/scene.json");
    json j;
    in >> j;

    Scene scene;
    const MeshFile mesh = read_mesh_file(dir + "/mesh.txt");
    scene.topology = mesh.topology;
    scene.landmarker = mesh.landmarker;
    scene.seed = j.at("seed").get<std::uint64_t>();
    scene.unit_to_mm = j.at("unit_to_mm").get<double>();
    scene.camera.scale = j.at("camera").at("scale").get<double>();
    scene.camera.principal = Vec2(j.at("camera").at("principal")[0].get<double>(),
                                  j.at("camera").at("principal")[1].get<double>());
    scene.camera.root_depth = j.at("camera").at("root_depth").get<double>();

    scene.gt_heatmaps.scores = read_tensor(dir + "/heatmaps.mpt");
    scene.gt_heatmaps.alpha = j.at("alpha").get<double>();
    scene.gt_vertices_px = read_tensor(dir + "/vertices_px.mpt").to_points3();
    scene.gt_vertices_3d = read_tensor(dir + "/vertices_3d.mpt").to_points3();
    scene.gt_joints = read_tensor(dir + "/joints.mpt").to_points3();
    scene.gt_joints_px = read_tensor(dir + "/joints_px.mpt").to_points3();
    scene.gt_mask = read_mask_pgm(dir + "/mask.pgm");

    for (const auto& a : j.at("annotations")) {
        SurfaceAnnotation ann;
        ann.pixel = Vec2(a.at("pixel")[0].get<double>(), a.at("pixel")[1].get<double>());
        ann.bc.face = a.at("face").get<int>();
        for (int m = 0; m < 3; ++m) ann.bc.weights[m] = a.at("weights")[m].get<double>();
        scene.annotations.push_back(ann);
    }
    for (const auto& v : j.at("visibility"))
        scene.visibility_labels.push_back(static_cast<VisLabel>(v.get<int>()));
    return scene;
}

}  // namespace mpk
