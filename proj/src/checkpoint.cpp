#include "morig/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace morig {

namespace {

constexpr char kMagic[8] = {'M', 'R', 'I', 'G', 'P', 'R', 'M', '1'};
constexpr uint32_t kVersion = 1;

struct File {
    FILE* f = nullptr;
    std::string path;
    ~File() {
        if (f) std::fclose(f);
    }
};

void write_bytes(File& out, const void* p, size_t n) {
    if (std::fwrite(p, 1, n, out.f) != n)
        throw std::runtime_error("checkpoint: write failed for " + out.path);
}

void read_bytes(File& in, void* p, size_t n) {
    if (std::fread(p, 1, n, in.f) != n)
        throw std::runtime_error("checkpoint: truncated file " + in.path);
}

template <class T>
void write_pod(File& out, T v) {
    write_bytes(out, &v, sizeof(T));
}

template <class T>
T read_pod(File& in) {
    T v;
    read_bytes(in, &v, sizeof(T));
    return v;
}

void write_entry(File& out, const std::string& name, const Shape& shape,
                 const std::vector<double>& payload) {
    write_pod<uint32_t>(out, uint32_t(name.size()));
    write_bytes(out, name.data(), name.size());
    write_pod<uint32_t>(out, uint32_t(shape.size()));
    for (int64_t e : shape) write_pod<int64_t>(out, e);
    write_bytes(out, payload.data(), payload.size() * sizeof(double));
}

struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> payload;
};

std::vector<Entry> read_all(const std::string& path) {
    File in;
    in.path = path;
    in.f = std::fopen(path.c_str(), "rb");
    if (!in.f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    read_bytes(in, magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = read_pod<uint32_t>(in);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint64_t count = read_pod<uint64_t>(in);
    std::vector<Entry> entries;
    entries.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        Entry e;
        uint32_t len = read_pod<uint32_t>(in);
        e.name.resize(len);
        read_bytes(in, e.name.data(), len);
        uint32_t rank = read_pod<uint32_t>(in);
        e.shape.resize(rank);
        for (uint32_t r = 0; r < rank; ++r) e.shape[r] = read_pod<int64_t>(in);
        e.payload.resize(size_t(shape_numel(e.shape)));
        read_bytes(in, e.payload.data(), e.payload.size() * sizeof(double));
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_all(const std::string& path, const std::vector<Entry>& entries) {
    File out;
    out.path = path;
    out.f = std::fopen(path.c_str(), "wb");
    if (!out.f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    write_bytes(out, kMagic, 8);
    write_pod<uint32_t>(out, kVersion);
    write_pod<uint64_t>(out, uint64_t(entries.size()));
    for (const Entry& e : entries) write_entry(out, e.name, e.shape, e.payload);
}

} // namespace

void save_checkpoint(const std::string& path, const ParamSet& params) {
    std::vector<Entry> entries;
    for (const Parameter* p : params.all())
        entries.push_back({p->name, p->value.shape, *p->value.data});
    write_all(path, entries);
}

void load_checkpoint(const std::string& path, ParamSet& params) {
    for (Entry& e : read_all(path)) {
        Parameter* p = params.find(e.name);
        if (!p) throw std::runtime_error("checkpoint: unknown parameter '" + e.name + "'");
        if (e.shape != p->value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for '" + e.name + "': file " +
                                     shape_str(e.shape) + " vs model " +
                                     shape_str(p->value.shape));
        p->value = Tensor(e.shape, std::move(e.payload));
    }
}

void save_training_state(const std::string& path, const ParamSet& params, const Adam& opt) {
    std::vector<Entry> entries;
    for (const Parameter* p : params.all())
        entries.push_back({p->name, p->value.shape, *p->value.data});
    Adam& mutable_opt = const_cast<Adam&>(opt);
    for (auto& [name, mo] : mutable_opt.state()) {
        entries.push_back({"__opt__/m/" + name, {int64_t(mo.m.size())}, mo.m});
        entries.push_back({"__opt__/v/" + name, {int64_t(mo.v.size())}, mo.v});
    }
    entries.push_back({"__opt__/step", {1}, {double(mutable_opt.step_count())}});
    write_all(path, entries);
}

void load_training_state(const std::string& path, ParamSet& params, Adam& opt) {
    for (Entry& e : read_all(path)) {
        if (e.name == "__opt__/step") {
            opt.set_step_count(int64_t(e.payload[0]));
        } else if (e.name.rfind("__opt__/m/", 0) == 0) {
            opt.state()[e.name.substr(10)].m = std::move(e.payload);
        } else if (e.name.rfind("__opt__/v/", 0) == 0) {
            opt.state()[e.name.substr(10)].v = std::move(e.payload);
        } else {
            Parameter* p = params.find(e.name);
            if (!p) throw std::runtime_error("checkpoint: unknown parameter '" + e.name + "'");
            p->value = Tensor(e.shape, std::move(e.payload));
        }
    }
}

} // namespace morig
