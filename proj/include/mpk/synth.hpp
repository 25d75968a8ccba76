#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpk/camera.hpp"
#include "mpk/decode.hpp"
#include "mpk/losses.hpp"
#include "mpk/mesh.hpp"
#include "mpk/rng.hpp"
#include "mpk/types.hpp"

namespace mpk {

struct TemplateMesh {
    MeshTopology topology;
    Landmarker landmarker;
};

// Procedural "capsule biped": a triangulated paper-doll sheet (~45 vertices)
// with head, arms, torso and legs, a single injective UV chart and a smooth
// depth bump so normals carry signal. Joint 0 of the landmarker is the root.
TemplateMesh make_biped_template();

// Axis-aligned triangulated sheet, handy for small fixtures.
TemplateMesh make_grid_sheet(int rows, int cols, double spacing = 1.0, double bump = 0.25);

// One midpoint subdivision; original vertices keep their indices.
MeshTopology midpoint_subdivide(const MeshTopology& topo);

// Smooth seeded deformation: similarity transform plus sinusoidal
// displacement waves, evaluable at any 3D point.
struct DeformationField {
    Mat3 linear = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    struct Wave {
        int target_axis = 0;
        int source_axis = 1;
        double amplitude = 0.0;
        double frequency = 1.0;
        double phase = 0.0;
    };
    std::vector<Wave> waves;

    Vec3 apply(const Vec3& p) const;
    Points3 apply(const Points3& pts) const;
};

DeformationField random_deformation(Rng& rng, double amplitude);

// Linear blend of fixed sinusoidal basis fields; deformations drawn from this
// family make the high mesh an exactly linear function of the low mesh, which
// is the regime the learned upsampler is meant to exploit.
struct DeformationBasis {
    struct BasisField {
        Vec3 direction;
        Vec3 wave_vector;
        double phase;
    };
    std::vector<BasisField> fields;

    Points3 apply(const Points3& rest, const VecX& coefficients) const;
};

DeformationBasis make_deformation_basis(int count, std::uint64_t seed);

struct SceneConfig {
    int height = 32;
    int width = 32;
    int annotation_count = 32;
    double pose_amplitude = 0.25;
    double heatmap_std = 1.5;   // px
    double margin = 0.12;       // camera framing margin, fraction of crop
    double alpha = 1.0;
    double unit_to_mm = 1000.0;
};

// Synthetic ground truth for one single-person crop.
struct Scene {
    MeshTopology topology;
    Landmarker landmarker;
    Points3 gt_vertices_3d;   // posed, model units
    Camera camera;
    double unit_to_mm = 1000.0;
    Points3 gt_vertices_px;   // projected XY + root-relative depth, pixels
    std::vector<SurfaceAnnotation> annotations;
    std::vector<VisLabel> visibility_labels;
    Image gt_mask;            // hard raster of front-facing faces
    Points3 gt_joints;        // model units
    Points3 gt_joints_px;     // pixel space
    HeatmapStack gt_heatmaps;
    std::uint64_t seed = 0;

    int root_joint() const { return 0; }
};

Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

// Uniform samples over the front-facing projected surface; every sample's
// pixel is the barycentric combination of the projected face corners and
// lands on the hard mask.
std::vector<SurfaceAnnotation> sample_annotations(const Scene& scene, int n, std::uint64_t seed);

// Per-vertex scores whose softmax reproduces the annotation's barycentric
// distribution (floored at -40): log beta on the face corners.
VecX annotation_sharp_scores(const SurfaceAnnotation& ann, const MeshTopology& topo);

bool face_front_facing(const Points3& positions, const std::array<int, 3>& tri);

// Scene directory: mesh.txt, heatmaps.mpt, gt tensors, mask.pgm, scene.json.
void write_scene(const std::string& dir, const Scene& scene);
Scene read_scene(const std::string& dir);

}  // namespace mpk
