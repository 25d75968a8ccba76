#include "mpk/image_io.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include "mpk/errors.hpp"

namespace mpk {

void write_mask_pgm(const std::string& path, const Image& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << mask.cols() << " " << mask.rows() << "\n255\n";
    std::vector<unsigned char> row(mask.cols());
    for (Eigen::Index y = 0; y < mask.rows(); ++y) {
        for (Eigen::Index x = 0; x < mask.cols(); ++x)
            row[x] = mask(y, x) > 0.5 ? 255 : 0;
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw IoError("short write: " + path);
}

Image read_mask_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw IoError("not a P5 PGM: " + path);
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (!in || w <= 0 || h <= 0 || maxval != 255)
        throw IoError("bad PGM header: " + path);
    in.get();  // single whitespace after maxval
    Image mask(h, w);
    std::vector<unsigned char> row(w);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), w);
        if (!in) throw IoError("truncated PGM payload: " + path);
        for (int x = 0; x < w; ++x) mask(y, x) = row[x] > 127 ? 1.0 : 0.0;
    }
    return mask;
}

}  // namespace mpk
