#pragma once

#include <array>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "morig/vec3.hpp"

namespace morig {

using Adjacency = std::vector<std::vector<int32_t>>;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct NormTransform {
    Vec3 translation; // applied before scaling
    double scale = 1.0;

    Vec3 apply(const Vec3& v) const { return (v + translation) * scale; }
    Vec3 invert(const Vec3& v) const { return v / scale - translation; }
};

class InsideTester;

// Triangle mesh, normalized on construction: centroid at the origin, longest
// bounding-box side equal to 1. Degenerate triangles are dropped (counted in
// dropped_triangles). Neighborhoods are built by build_neighborhoods().
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int32_t, 3>> triangles;
    Adjacency one_ring;
    Adjacency geodesic_neighbors;
    double geodesic_radius = 0.0;
    NormTransform norm_transform;
    int dropped_triangles = 0;

    int64_t vertex_count() const { return int64_t(vertices.size()); }
    Vec3 centroid() const;
    Vec3 bbox_min() const;
    Vec3 bbox_max() const;
    double height() const; // bounding-box y extent

    // Same topology, new vertex positions (adjacency rebuilt with the stored
    // geodesic radius since edge lengths change).
    Mesh with_vertices(std::vector<Vec3> new_vertices) const;

    const InsideTester& inside_tester() const;

  private:
    mutable std::shared_ptr<InsideTester> inside_;
};

// Builds a mesh from raw buffers; normalizes unless `normalize` is false.
Mesh make_mesh(std::vector<Vec3> vertices, std::vector<std::array<int32_t, 3>> triangles,
               bool normalize = true);

// OBJ input (v/f records, faces triangulated fan-wise on load).
Mesh load_obj(const std::string& path, bool normalize = true);
void save_obj(const std::string& path, const Mesh& mesh);

// One-ring from shared triangle edges, geodesic neighbors = vertices within
// edge-graph shortest-path distance <= r_g (self excluded).
void build_neighborhoods(Mesh& mesh, double r_g);

// Dijkstra from `source` over the edge graph with Euclidean weights;
// unreachable vertices get +inf.
std::vector<double> geodesic_distance(const Mesh& mesh, int32_t source);

// Multi-source variant; `nearest_source` (optional out) gets the index of the
// closest seed per vertex, ties resolved toward the lower seed value.
std::vector<double> geodesic_distance_multi(const Mesh& mesh,
                                            const std::vector<int32_t>& sources,
                                            std::vector<int32_t>* nearest_source = nullptr);

struct SymmetryPlane {
    bool present = false;
    Vec3 normal;
    double offset = 0.0; // plane: dot(normal, p) == offset

    Vec3 reflect(const Vec3& p) const {
        double d = dot(normal, p) - offset;
        return p - normal * (2.0 * d);
    }
};

// Tests the principal-axis planes through the centroid; returns the best one
// when the mirrored vertex set lands within `eps_sym` Chamfer distance.
SymmetryPlane detect_symmetry(const Mesh& mesh, double eps_sym = 0.01);

// Symmetric Chamfer distance between two point sets (mean of both directions).
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// Ray-parity point-in-mesh test. For meshes made of several closed components
// the parity is taken per component, inside = any component encloses the
// point. Repeated queries share a cached triangle grid.
bool point_in_mesh(const Mesh& mesh, const Vec3& p);

// Cached accelerated tester (fixed +z ray with deterministic jitter retry).
class InsideTester {
  public:
    explicit InsideTester(const Mesh& mesh);
    bool inside(const Vec3& p) const;
    // Fraction of `n` uniform interior samples of segment [a,b] that fall
    // outside the mesh.
    double segment_outside_fraction(const Vec3& a, const Vec3& b, int n) const;
    bool segment_inside(const Vec3& a, const Vec3& b, int n) const;

  private:
    struct Tri {
        Vec3 a, b, c;
        int component;
    };
    std::vector<Tri> tris_;
    int n_components_ = 0;
    double cell_ = 0.1;
    Vec3 lo_, hi_;
    int nx_ = 1, ny_ = 1;
    std::vector<std::vector<int32_t>> grid_;
    bool shoot(const Vec3& p, double jx, double jy, std::vector<int>& parity) const;
};

struct BoneDistanceResult {
    std::vector<double> distance;    // per vertex
    std::vector<uint8_t> fallback;   // 1 where straight-line fallback was used
};

// Volumetric distance from every vertex to the bone segment: shortest path in
// the graph of mesh edges plus vertex-to-bone-sample links whose segments stay
// inside the mesh (the bone has `bone_samples` interior samples). Vertices
// with no interior path fall back to point-to-segment distance and are
// flagged.
BoneDistanceResult bone_vertex_distance(const Mesh& mesh, const Vec3& joint_a,
                                        const Vec3& joint_b, int bone_samples = 8,
                                        int segment_checks = 6);

} // namespace morig
