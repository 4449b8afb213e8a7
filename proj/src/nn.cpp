#include "morig/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace morig {

Tensor glorot(Rng& rng, int64_t fan_in, int64_t fan_out) {
    double a = std::sqrt(6.0 / double(fan_in + fan_out));
    return randu(rng, {fan_in, fan_out}, -a, a);
}

Tensor broadcast_rows(const Tensor& row, int64_t rows) {
    return mul(ones({rows, 1}), row);
}

Linear::Linear(ParamSet& ps, const std::string& name, int64_t in, int64_t out, Rng rng,
               bool zero_init) {
    Rng r = rng.child(name);
    Tensor w = zero_init ? zeros({in, out}) : glorot(r, in, out);
    W = &ps.add(name + "/W", std::move(w));
    b = &ps.add(name + "/b", zeros({1, out}));
}

Tensor Linear::operator()(const Tensor& x) const {
    return add(matmul(x, use_param(*W)), use_param(*b));
}

Mlp::Mlp(ParamSet& ps, const std::string& name, const std::vector<int64_t>& widths, Rng rng,
         bool zero_final) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least [in,out] widths");
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        bool last = i + 2 == widths.size();
        layers.emplace_back(ps, name + "/l" + std::to_string(i), widths[i], widths[i + 1], rng,
                            last && zero_final);
    }
}

Tensor Mlp::operator()(const Tensor& x) const {
    Tensor h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        h = layers[i](h);
        if (i + 1 < layers.size()) h = relu(h);
    }
    return h;
}

EdgeSet make_edge_set(const Adjacency& adj, int64_t n) {
    EdgeSet e;
    for (int64_t v = 0; v < n; ++v) {
        const auto& nb = adj[size_t(v)];
        if (nb.empty()) {
            e.dst.push_back(v);
            e.src.push_back(v);
            e.selffed.push_back(int32_t(v));
            continue;
        }
        for (int32_t u : nb) {
            e.dst.push_back(v);
            e.src.push_back(u);
        }
    }
    return e;
}

VertexGraph make_vertex_graph(const Adjacency& onering, const Adjacency& geodesic) {
    if (onering.size() != geodesic.size())
        throw std::invalid_argument("make_vertex_graph: adjacency sizes differ");
    VertexGraph g;
    g.n = int64_t(onering.size());
    g.onering = make_edge_set(onering, g.n);
    g.geodesic = make_edge_set(geodesic, g.n);
    return g;
}

Gcu::Gcu(ParamSet& ps, const std::string& name, int64_t in, int64_t out, Rng rng)
    : edge_onering(ps, name + "/er", 2 * in, out, rng),
      edge_geodesic(ps, name + "/eg", 2 * in, out, rng),
      combine(ps, name + "/comb", 2 * out, out, rng) {}

namespace {

Tensor edge_branch(const Tensor& x, const EdgeSet& e, const Linear& lin, int64_t n) {
    Tensor xv = gather_rows(x, e.dst);
    Tensor xu = gather_rows(x, e.src);
    Tensor msg = leaky_relu(lin(concat({xv, sub(xu, xv)}, 1)));
    return segment_max(msg, e.dst, n);
}

} // namespace

Tensor Gcu::operator()(const Tensor& x, const VertexGraph& g) const {
    Tensor ht = edge_branch(x, g.onering, edge_onering, g.n);
    Tensor hg = edge_branch(x, g.geodesic, edge_geodesic, g.n);
    return leaky_relu(combine(concat({ht, hg}, 1)));
}

GmEdgeNet::GmEdgeNet(ParamSet& ps, const std::string& name, const GmEdgeNetSpec& spec, Rng rng) {
    int64_t skip = 0;
    for (size_t i = 0; i + 1 < spec.gcu_widths.size(); ++i) {
        gcus.emplace_back(ps, name + "/gcu" + std::to_string(i), spec.gcu_widths[i],
                          spec.gcu_widths[i + 1], rng);
        skip += spec.gcu_widths[i + 1];
    }
    mid = Linear(ps, name + "/mid", skip, spec.mid_width, rng);
    std::vector<int64_t> head_w;
    head_w.push_back(spec.gcu_widths.front() + skip + spec.mid_width);
    for (int64_t w : spec.head_widths) head_w.push_back(w);
    head_w.push_back(spec.out_width);
    head = Mlp(ps, name + "/head", head_w, rng, spec.zero_final);
}

Tensor GmEdgeNet::operator()(const Tensor& x, const VertexGraph& g) const {
    std::vector<Tensor> skips;
    Tensor h = x;
    for (const Gcu& gcu : gcus) {
        h = gcu(h, g);
        skips.push_back(h);
    }
    Tensor cat = concat(skips, 1);
    Tensor m = relu(mid(cat));
    Tensor global = broadcast_rows(reshape(reduce_max(m, 0), {1, m.shape[1]}), g.n);
    std::vector<Tensor> all = {x};
    for (Tensor& s : skips) all.push_back(s);
    all.push_back(global);
    return head(concat(all, 1));
}

// ---- point network -----------------------------------------------------------

std::vector<int64_t> farthest_point_sample(const std::vector<std::array<double, 3>>& pts,
                                           int64_t count, Rng rng) {
    int64_t n = int64_t(pts.size());
    count = std::min(count, n);
    std::array<double, 3> probe = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto d2 = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
        double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
        return dx * dx + dy * dy + dz * dz;
    };
    int64_t start = 0;
    double best = d2(pts[0], probe);
    for (int64_t i = 1; i < n; ++i) {
        double d = d2(pts[size_t(i)], probe);
        if (d < best) {
            best = d;
            start = i;
        }
    }
    std::vector<int64_t> picked = {start};
    std::vector<double> mind(size_t(n));
    for (int64_t i = 0; i < n; ++i) mind[size_t(i)] = d2(pts[size_t(i)], pts[size_t(start)]);
    while (int64_t(picked.size()) < count) {
        int64_t far = 0;
        for (int64_t i = 1; i < n; ++i)
            if (mind[size_t(i)] > mind[size_t(far)]) far = i;
        picked.push_back(far);
        for (int64_t i = 0; i < n; ++i)
            mind[size_t(i)] = std::min(mind[size_t(i)], d2(pts[size_t(i)], pts[size_t(far)]));
    }
    return picked;
}

namespace {

struct Grouping {
    std::vector<int64_t> member;   // flattened neighbor index into parent set
    std::vector<int64_t> centroid; // segment id per member
    std::vector<double> relpos;    // 3 per member
};

// Up to `max_samples` nearest points within `radius` of each centroid
// (distance then index order); empty balls fall back to the centroid itself.
Grouping ball_group(const std::vector<std::array<double, 3>>& pts,
                    const std::vector<int64_t>& centroids, double radius, int max_samples) {
    Grouping g;
    double r2 = radius * radius;
    for (size_t c = 0; c < centroids.size(); ++c) {
        const auto& cp = pts[size_t(centroids[c])];
        std::vector<std::pair<double, int64_t>> cand;
        for (int64_t i = 0; i < int64_t(pts.size()); ++i) {
            double dx = pts[size_t(i)][0] - cp[0];
            double dy = pts[size_t(i)][1] - cp[1];
            double dz = pts[size_t(i)][2] - cp[2];
            double d = dx * dx + dy * dy + dz * dz;
            if (d <= r2) cand.emplace_back(d, i);
        }
        std::sort(cand.begin(), cand.end());
        if (cand.empty()) cand.emplace_back(0.0, centroids[c]);
        if (int(cand.size()) > max_samples) cand.resize(size_t(max_samples));
        for (auto& [d, i] : cand) {
            g.member.push_back(i);
            g.centroid.push_back(int64_t(c));
            const auto& p = pts[size_t(i)];
            g.relpos.push_back(p[0] - cp[0]);
            g.relpos.push_back(p[1] - cp[1]);
            g.relpos.push_back(p[2] - cp[2]);
        }
    }
    return g;
}

// Inverse-square-distance 3-NN interpolation from coarse to fine positions.
Tensor interpolate3(const Tensor& coarse_feat,
                    const std::vector<std::array<double, 3>>& coarse_pos,
                    const std::vector<std::array<double, 3>>& fine_pos) {
    int64_t nf = int64_t(fine_pos.size());
    int64_t nc = int64_t(coarse_pos.size());
    if (nc == 1) return broadcast_rows(coarse_feat, nf);
    int64_t k = std::min<int64_t>(3, nc);
    std::vector<std::vector<double>> weights(size_t(k), std::vector<double>(size_t(nf)));
    std::vector<std::vector<int64_t>> nbr(size_t(k), std::vector<int64_t>(size_t(nf)));
    for (int64_t f = 0; f < nf; ++f) {
        std::vector<std::pair<double, int64_t>> cand(size_t(nc));
        for (int64_t c = 0; c < nc; ++c) {
            double dx = fine_pos[size_t(f)][0] - coarse_pos[size_t(c)][0];
            double dy = fine_pos[size_t(f)][1] - coarse_pos[size_t(c)][1];
            double dz = fine_pos[size_t(f)][2] - coarse_pos[size_t(c)][2];
            cand[size_t(c)] = {dx * dx + dy * dy + dz * dz, c};
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        double wtotal = 0;
        for (int64_t j = 0; j < k; ++j) {
            double w = 1.0 / (cand[size_t(j)].first + 1e-10);
            weights[size_t(j)][size_t(f)] = w;
            nbr[size_t(j)][size_t(f)] = cand[size_t(j)].second;
            wtotal += w;
        }
        for (int64_t j = 0; j < k; ++j) weights[size_t(j)][size_t(f)] /= wtotal;
    }
    Tensor out;
    for (int64_t j = 0; j < k; ++j) {
        Tensor part = mul(gather_rows(coarse_feat, nbr[size_t(j)]),
                          tensor({nf, 1}, weights[size_t(j)]));
        out = j == 0 ? part : add(out, part);
    }
    return out;
}

std::vector<std::array<double, 3>> select(const std::vector<std::array<double, 3>>& pts,
                                          const std::vector<int64_t>& idx) {
    std::vector<std::array<double, 3>> out;
    out.reserve(idx.size());
    for (int64_t i : idx) out.push_back(pts[size_t(i)]);
    return out;
}

} // namespace

PointNetPP::PointNetPP(ParamSet& ps, const std::string& name, Rng rng)
    : sa1(ps, name + "/sa1", {3, 32, 32, 64}, rng),
      sa2(ps, name + "/sa2", {64 + 3, 64, 64, 128}, rng),
      sa3(ps, name + "/sa3", {128 + 3, 256, 256, 256}, rng),
      sa_global(ps, name + "/sag", {256 + 3, 256, 256, 512}, rng),
      fp1(ps, name + "/fp1", {512 + 256, 256, 256}, rng),
      fp2(ps, name + "/fp2", {256 + 128, 256, 128}, rng),
      fp3(ps, name + "/fp3", {128 + 64, 128, 64}, rng),
      fp4(ps, name + "/fp4", {64, 64, 64}, rng),
      out_mlp(ps, name + "/out", {64, 64, 64}, rng) {}

Tensor PointNetPP::operator()(const std::vector<std::array<double, 3>>& pts, Rng sample_rng,
                              const PointNetOptions& opt) const {
    int64_t n = int64_t(pts.size());
    if (n < 32)
        throw std::invalid_argument("point features: need at least 32 points, got " +
                                    std::to_string(n));

    auto sample = [&](const std::vector<std::array<double, 3>>& p, double ratio, uint64_t salt) {
        if (opt.dense_sampling) {
            std::vector<int64_t> all(p.size());
            for (size_t i = 0; i < p.size(); ++i) all[i] = int64_t(i);
            return all;
        }
        int64_t count = std::max<int64_t>(1, int64_t(std::llround(double(p.size()) * ratio)));
        return farthest_point_sample(p, count, sample_rng.child(salt));
    };

    auto run_sa = [&](const Mlp& mlp, const Tensor& feat,
                      const std::vector<std::array<double, 3>>& pos,
                      const std::vector<int64_t>& centroids, double radius, int max_samples) {
        Grouping g = ball_group(pos, centroids, radius, max_samples);
        Tensor rel = tensor({int64_t(g.member.size()), 3}, g.relpos);
        Tensor in = feat.data ? concat({gather_rows(feat, g.member), rel}, 1) : rel;
        Tensor msg = relu(mlp(in));
        return segment_max(msg, g.centroid, int64_t(centroids.size()));
    };

    // set abstraction pyramid
    auto c1 = sample(pts, 0.5, 1);
    Tensor f1 = run_sa(sa1, Tensor(), pts, c1, 0.12, 64);
    auto p1 = select(pts, c1);

    auto c2 = sample(p1, 0.25, 2);
    Tensor f2 = run_sa(sa2, f1, p1, c2, 0.25, 64);
    auto p2 = select(p1, c2);

    auto c3 = sample(p2, 0.25, 3);
    Tensor f3 = run_sa(sa3, f2, p2, c3, 0.5, 64);
    auto p3 = select(p2, c3);

    // feature propagation back to full resolution
    Tensor d3;
    if (opt.global_pool) {
        std::vector<double> pos_flat;
        for (const auto& p : p3) {
            pos_flat.push_back(p[0]);
            pos_flat.push_back(p[1]);
            pos_flat.push_back(p[2]);
        }
        Tensor gin = concat({f3, tensor({int64_t(p3.size()), 3}, pos_flat)}, 1);
        Tensor gfeat = reshape(reduce_max(relu(sa_global(gin)), 0), {1, 512});
        d3 = relu(fp1(concat({broadcast_rows(gfeat, int64_t(p3.size())), f3}, 1)));
    } else {
        d3 = relu(fp1(concat({zeros({int64_t(p3.size()), 512}), f3}, 1)));
    }
    Tensor d2 = relu(fp2(concat({interpolate3(d3, p3, p2), f2}, 1)));
    Tensor d1 = relu(fp3(concat({interpolate3(d2, p2, p1), f1}, 1)));
    Tensor d0 = relu(fp4(interpolate3(d1, p1, pts)));
    return l2_normalize(out_mlp(d0));
}

} // namespace morig
