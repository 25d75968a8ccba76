#include "mpk/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace mpk {

Tensor Tensor::from_matrix(const MatX& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            t.at(i, j) = m(i, j);
    return t;
}

Tensor Tensor::from_points(const Points3& p) {
    Tensor t({static_cast<std::size_t>(p.rows()), 3});
    std::memcpy(t.data.data(), p.data(), sizeof(double) * t.data.size());
    return t;
}

Tensor Tensor::from_points(const Points2& p) {
    Tensor t({static_cast<std::size_t>(p.rows()), 2});
    std::memcpy(t.data.data(), p.data(), sizeof(double) * t.data.size());
    return t;
}

Tensor Tensor::from_vector(const VecX& v) {
    Tensor t({static_cast<std::size_t>(v.size())});
    for (Eigen::Index i = 0; i < v.size(); ++i) t.at(i) = v(i);
    return t;
}

MatX Tensor::to_matrix() const {
    if (rank() != 2) throw ShapeMismatch("to_matrix expects a rank-2 tensor");
    MatX m(dims[0], dims[1]);
    for (std::size_t i = 0; i < dims[0]; ++i)
        for (std::size_t j = 0; j < dims[1]; ++j)
            m(i, j) = at(i, j);
    return m;
}

VecX Tensor::to_vector() const {
    if (rank() != 1) throw ShapeMismatch("to_vector expects a rank-1 tensor");
    VecX v(dims[0]);
    for (std::size_t i = 0; i < dims[0]; ++i) v(i) = at(i);
    return v;
}

Points3 Tensor::to_points3() const {
    if (rank() != 2 || dims[1] != 3) throw ShapeMismatch("to_points3 expects a Vx3 tensor");
    Points3 p(dims[0], 3);
    std::memcpy(p.data(), data.data(), sizeof(double) * data.size());
    return p;
}

namespace {
constexpr char kMagic[4] = {'M', 'P', 'T', '1'};
}

void write_tensor(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), 4);
    for (std::size_t d : t.dims) {
        const std::uint32_t dim = static_cast<std::uint32_t>(d);
        out.write(reinterpret_cast<const char*>(&dim), 4);
    }
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!out) throw IoError("short write: " + path);
}

Tensor read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("bad magic in tensor file: " + path);
    std::uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    if (!in || rank > 8) throw IoError("bad rank in tensor file: " + path);
    Tensor t;
    t.dims.resize(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint32_t dim = 0;
        in.read(reinterpret_cast<char*>(&dim), 4);
        if (!in) throw IoError("truncated dims in tensor file: " + path);
        t.dims[i] = dim;
    }
    t.data.resize(t.element_count());
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw IoError("truncated payload in tensor file: " + path);
    return t;
}

}  // namespace mpk
