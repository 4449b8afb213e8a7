#pragma once

#include <array>
#include <string>
#include <vector>

#include "morig/optim.hpp"
#include "morig/tensor.hpp"

namespace morig {

using Adjacency = std::vector<std::vector<int32_t>>;

Tensor glorot(Rng& rng, int64_t fan_in, int64_t fan_out);

// Broadcasts a [1,C] row to [rows,C].
Tensor broadcast_rows(const Tensor& row, int64_t rows);

struct Linear {
    Parameter* W = nullptr;
    Parameter* b = nullptr;

    Linear() = default;
    Linear(ParamSet& ps, const std::string& name, int64_t in, int64_t out, Rng rng,
           bool zero_init = false);

    Tensor operator()(const Tensor& x) const; // x: [N,in] -> [N,out]
    int64_t in_width() const { return W->value.shape[0]; }
    int64_t out_width() const { return W->value.shape[1]; }
};

// Linear+ReLU chain; no activation after the last layer.
struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    Mlp(ParamSet& ps, const std::string& name, const std::vector<int64_t>& widths, Rng rng,
        bool zero_final = false);

    Tensor operator()(const Tensor& x) const;
};

// Message-passing edge lists flattened out of adjacency; vertices without
// neighbors get a self message and are reported in `selffed`.
struct EdgeSet {
    std::vector<int64_t> dst, src;
    std::vector<int32_t> selffed;
};

EdgeSet make_edge_set(const Adjacency& adj, int64_t n);

struct VertexGraph {
    int64_t n = 0;
    EdgeSet onering;
    EdgeSet geodesic;
};

VertexGraph make_vertex_graph(const Adjacency& onering, const Adjacency& geodesic);

// Graph convolution unit: two edge-conv branches (one-ring and geodesic
// neighbors), each max-aggregated, concatenated and projected.
struct Gcu {
    Linear edge_onering;  // [2*in -> out]
    Linear edge_geodesic; // [2*in -> out]
    Linear combine;       // [2*out -> out]

    Gcu() = default;
    Gcu(ParamSet& ps, const std::string& name, int64_t in, int64_t out, Rng rng);

    Tensor operator()(const Tensor& x, const VertexGraph& g) const;
};

// GCU stack with skip concatenation, global max-pool broadcast and an MLP
// head, parameterized by the layer widths.
struct GmEdgeNetSpec {
    std::vector<int64_t> gcu_widths; // e.g. {3, 32, 64, 256, 512}
    int64_t mid_width = 1024;
    std::vector<int64_t> head_widths; // hidden widths of the final MLP
    int64_t out_width = 0;
    bool zero_final = false;
};

struct GmEdgeNet {
    std::vector<Gcu> gcus;
    Linear mid;
    Mlp head;

    GmEdgeNet() = default;
    GmEdgeNet(ParamSet& ps, const std::string& name, const GmEdgeNetSpec& spec, Rng rng);

    Tensor operator()(const Tensor& x, const VertexGraph& g) const;
};

// ---- point cloud feature network (set abstraction + feature propagation) ---

struct PointNetOptions {
    bool global_pool = true;   // include the global stage
    bool dense_sampling = false; // all points as centroids (locality tests)
};

struct PointNetPP {
    Mlp sa1, sa2, sa3, sa_global;
    Mlp fp1, fp2, fp3, fp4;
    Mlp out_mlp;

    PointNetPP() = default;
    PointNetPP(ParamSet& ps, const std::string& name, Rng rng);

    // Positions; outputs unit-length 64-d features per point. `sample_rng`
    // seeds the farthest-point start. Requires >= 32 points.
    Tensor operator()(const std::vector<std::array<double, 3>>& pts, Rng sample_rng,
                      const PointNetOptions& opt = {}) const;
};

// Deterministic farthest point sampling; the start is the point nearest a
// seeded random probe position (permutation-stable).
std::vector<int64_t> farthest_point_sample(const std::vector<std::array<double, 3>>& pts,
                                           int64_t count, Rng rng);

} // namespace morig
