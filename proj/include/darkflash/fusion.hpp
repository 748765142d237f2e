#pragma once

// Depth-normal fusion: refine a low-frequency stereo depth map with
// high-frequency normal estimates by least squares. Per valid pixel i the
// unknown is the refined depth z_i with
//
//   position terms   w_z * (z_i - z_stereo_i)^2
//   tangent terms    w_n * (n_i . t)^2 for each horizontal/vertical neighbor,
//
// where t = z_j * u_j - z_i * u_i is the perspective-correct surface tangent
// (u_q is the unprojection direction of pixel q per unit depth), which is
// exactly linear in the depths. The normal equations are SPD and solved
// matrix-free with Jacobi-preconditioned conjugate gradient. A guided
// bilateral filter provides the smoothing baseline.

#include <cmath>
#include <fstream>
#include <limits>
#include <vector>

#include "darkflash/geometry.hpp"
#include "darkflash/image.hpp"

namespace darkflash {

struct FusionSystem {
    int width = 0, height = 0;
    std::vector<int> unknown;        // pixel -> unknown index, -1 outside
    std::vector<int> pixel_of;       // unknown -> pixel index
    std::vector<double> stereo;      // per unknown
    double w_z = 1.0, w_n = 10.0;

    struct Edge {
        int i = 0, j = 0;       // unknown indices
        double ci = 0.0, cj = 0.0;  // residual = ci * z_i + cj * z_j
    };
    std::vector<Edge> edges;

    size_t size() const { return pixel_of.size(); }

    // y = A x for the normal equations A = w_z I + w_n sum_e e e^T.
    void apply(const std::vector<double>& x, std::vector<double>& y) const {
        for (size_t i = 0; i < x.size(); ++i) y[i] = w_z * x[i];
        for (const Edge& e : edges) {
            const double r = e.ci * x[e.i] + e.cj * x[e.j];
            y[e.i] += w_n * e.ci * r;
            y[e.j] += w_n * e.cj * r;
        }
    }

    std::vector<double> diagonal() const {
        std::vector<double> d(size(), w_z);
        for (const Edge& e : edges) {
            d[e.i] += w_n * e.ci * e.ci;
            d[e.j] += w_n * e.cj * e.cj;
        }
        return d;
    }

    std::vector<double> rhs() const {
        std::vector<double> b(size());
        for (size_t i = 0; i < b.size(); ++i) b[i] = w_z * stereo[i];
        return b;
    }

    // Quadratic fusion energy of a depth vector; the CG solution must not
    // exceed the energy of the stereo initial point.
    double energy(const std::vector<double>& z) const {
        double e = 0.0;
        for (size_t i = 0; i < z.size(); ++i) {
            const double d = z[i] - stereo[i];
            e += w_z * d * d;
        }
        for (const Edge& edge : edges) {
            const double r = edge.ci * z[edge.i] + edge.cj * z[edge.j];
            e += w_n * r * r;
        }
        return e;
    }
};

inline FusionSystem build_fusion_system(const DepthMap& stereo_depth,
                                        const NormalMap& normals, const Camera& camera,
                                        double w_z, double w_n) {
    if (stereo_depth.width != normals.width || stereo_depth.height != normals.height)
        throw std::invalid_argument("fusion: dimensions disagree");
    if (!(w_z >= 0.0) || !(w_n >= 0.0) || (w_z == 0.0 && w_n == 0.0))
        throw std::invalid_argument("fusion weights must be >= 0 and not both zero");

    const int w = stereo_depth.width, h = stereo_depth.height;
    FusionSystem sys;
    sys.width = w;
    sys.height = h;
    sys.w_z = w_z;
    sys.w_n = w_n;
    sys.unknown.assign(static_cast<size_t>(w) * h, -1);

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (stereo_depth.is_valid(x, y)) {
                sys.unknown[static_cast<size_t>(y) * w + x] =
                    static_cast<int>(sys.pixel_of.size());
                sys.pixel_of.push_back(y * w + x);
                sys.stereo.push_back(stereo_depth.at(x, y));
            }
    if (sys.pixel_of.empty())
        throw std::invalid_argument("fusion: no valid pixels");

    // unprojection direction per unit depth
    const auto dir = [&](int x, int y) {
        return Vec3{(x - camera.cx) / camera.fx, -(y - camera.cy) / camera.fy, -1.0};
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int ui = sys.unknown[static_cast<size_t>(y) * w + x];
            if (ui < 0 || !normals.is_valid(x, y)) continue;
            const Vec3 n = normals.at(x, y);
            for (const auto& [dx, dy] : {std::pair{1, 0}, std::pair{0, 1}}) {
                const int nx = x + dx, ny = y + dy;
                if (nx >= w || ny >= h) continue;
                const int uj = sys.unknown[static_cast<size_t>(ny) * w + nx];
                if (uj < 0) continue;
                sys.edges.push_back({ui, uj, -dot(n, dir(x, y)), dot(n, dir(nx, ny))});
            }
        }
    return sys;
}

// Jacobi-preconditioned conjugate gradient from the stereo initial point.
// Converges to relative residual |Ax-b|/|b| <= tolerance or throws with the
// achieved residual.
inline DepthMap solve_fusion(const FusionSystem& sys, double tolerance = 1e-8,
                             int max_iters = 2000) {
    const size_t n = sys.size();
    std::vector<double> x = sys.stereo;
    const std::vector<double> b = sys.rhs();
    const std::vector<double> diag = sys.diagonal();

    std::vector<double> r(n), z(n), p(n), Ap(n);
    sys.apply(x, Ap);
    double b_norm = 0.0;
    for (size_t i = 0; i < n; ++i) {
        r[i] = b[i] - Ap[i];
        b_norm += b[i] * b[i];
    }
    b_norm = std::sqrt(b_norm);
    if (b_norm <= 0.0) b_norm = 1.0;

    for (size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
    p = z;
    double rz = 0.0;
    for (size_t i = 0; i < n; ++i) rz += r[i] * z[i];

    double res = 0.0;
    for (size_t i = 0; i < n; ++i) res += r[i] * r[i];
    res = std::sqrt(res) / b_norm;

    for (int iter = 0; iter < max_iters && res > tolerance; ++iter) {
        sys.apply(p, Ap);
        double pAp = 0.0;
        for (size_t i = 0; i < n; ++i) pAp += p[i] * Ap[i];
        if (pAp <= 0.0) break;
        const double alpha = rz / pAp;
        for (size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        for (size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
        double rz_new = 0.0;
        for (size_t i = 0; i < n; ++i) rz_new += r[i] * z[i];
        const double beta = rz_new / rz;
        rz = rz_new;
        for (size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];

        res = 0.0;
        for (size_t i = 0; i < n; ++i) res += r[i] * r[i];
        res = std::sqrt(res) / b_norm;
    }
    if (res > tolerance)
        throw std::runtime_error("fusion CG failed to converge: residual " +
                                 std::to_string(res));

    DepthMap out(sys.width, sys.height);
    for (size_t u = 0; u < n; ++u)
        out.depth[static_cast<size_t>(sys.pixel_of[u])] = static_cast<float>(x[u]);
    return out;
}

// Guided bilateral filter over valid pixels; spatial kernel truncated at
// 3 sigma, range weight from the L2 guide difference.
inline DepthMap bilateral_smooth_depth(const DepthMap& depth, const ImageGrid& guide,
                                       double spatial_sigma, double range_sigma) {
    if (depth.width != guide.width || depth.height != guide.height)
        throw std::invalid_argument("bilateral: dimensions disagree");
    if (!(spatial_sigma > 0.0) || !(range_sigma > 0.0))
        throw std::invalid_argument("bilateral sigmas must be positive");

    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * spatial_sigma)));
    DepthMap out(depth.width, depth.height);
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            if (!depth.is_valid(x, y)) continue;
            double num = 0.0, den = 0.0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || nx >= depth.width || ny < 0 || ny >= depth.height)
                        continue;
                    if (!depth.is_valid(nx, ny)) continue;
                    double gdiff = 0.0;
                    for (int c = 0; c < guide.channels; ++c) {
                        const double d = static_cast<double>(guide.at(x, y, c)) -
                                         static_cast<double>(guide.at(nx, ny, c));
                        gdiff += d * d;
                    }
                    const double wgt =
                        std::exp(-0.5 * (dx * dx + dy * dy) / (spatial_sigma * spatial_sigma)) *
                        std::exp(-0.5 * gdiff / (range_sigma * range_sigma));
                    num += wgt * depth.at(nx, ny);
                    den += wgt;
                }
            out.at(x, y) = static_cast<float>(num / den);
        }
    return out;
}

inline double depth_rmse(const DepthMap& depth, const DepthMap& reference,
                         const std::vector<uint8_t>* mask = nullptr) {
    if (depth.width != reference.width || depth.height != reference.height)
        throw std::invalid_argument("depth_rmse: dimensions disagree");
    double sum = 0.0;
    size_t count = 0;
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            const size_t i = static_cast<size_t>(y) * depth.width + x;
            if (mask && !(*mask)[i]) continue;
            if (!depth.is_valid(x, y) || !reference.is_valid(x, y)) continue;
            const double d = static_cast<double>(depth.at(x, y)) -
                             static_cast<double>(reference.at(x, y));
            sum += d * d;
            ++count;
        }
    if (count == 0) throw std::invalid_argument("depth_rmse: empty mask");
    return std::sqrt(sum / static_cast<double>(count));
}

// Grid-triangulated ASCII PLY over valid pixels, for visual inspection.
inline void export_mesh_ply(const std::string& path, const DepthMap& depth,
                            const Camera& camera) {
    std::vector<int> vertex(static_cast<size_t>(depth.width) * depth.height, -1);
    std::vector<Vec3> points;
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x)
            if (depth.is_valid(x, y)) {
                vertex[static_cast<size_t>(y) * depth.width + x] =
                    static_cast<int>(points.size());
                points.push_back(unproject(camera, x, y, depth.at(x, y)));
            }

    std::vector<std::array<int, 3>> faces;
    const auto v = [&](int x, int y) {
        return vertex[static_cast<size_t>(y) * depth.width + x];
    };
    for (int y = 0; y + 1 < depth.height; ++y)
        for (int x = 0; x + 1 < depth.width; ++x) {
            const int a = v(x, y), b = v(x + 1, y), c = v(x, y + 1), d = v(x + 1, y + 1);
            if (a >= 0 && b >= 0 && c >= 0) faces.push_back({a, b, c});
            if (b >= 0 && d >= 0 && c >= 0) faces.push_back({b, d, c});
        }

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open PLY file for writing: " + path);
    out << "ply\nformat ascii 1.0\n"
        << "element vertex " << points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "element face " << faces.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    for (const Vec3& p : points)
        out << static_cast<float>(p.x) << " " << static_cast<float>(p.y) << " "
            << static_cast<float>(p.z) << "\n";
    for (const auto& f : faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
}

}  // namespace darkflash
