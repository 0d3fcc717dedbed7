// SPDX-License-Identifier: Apache-2.0
//
// Structured triangular mesh over a rectangle, with boundary tags for
// the loaded (exterior / interior) sides and the insulated remainder.
#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hygropc/io.hpp"

namespace hygropc::fem {

enum class BoundaryTag { none, exterior, interior, insulated };

inline const char* to_string(BoundaryTag t) {
  switch (t) {
    case BoundaryTag::none: return "none";
    case BoundaryTag::exterior: return "exterior";
    case BoundaryTag::interior: return "interior";
    case BoundaryTag::insulated: return "insulated";
  }
  return "?";
}

/// Linear-triangle mesh. Node (i, j) of the nx-by-ny grid has index
/// j*nx + i; the left column is loaded from the exterior side, the right
/// column from the interior side, top and bottom rows are insulated.
struct Mesh {
  Eigen::Matrix<double, Eigen::Dynamic, 2> nodes;   // N x 2 coordinates [m]
  Eigen::Matrix<int, Eigen::Dynamic, 3> triangles;  // E x 3, counter-clockwise
  std::vector<BoundaryTag> tags;                    // one per node
  int nx = 0, ny = 0;
  double lx = 0.0, ly = 0.0;

  int node_count() const { return static_cast<int>(nodes.rows()); }
  int element_count() const { return static_cast<int>(triangles.rows()); }

  double signed_area(int e) const {
    const auto t = triangles.row(e);
    const Eigen::Vector2d a = nodes.row(t[0]), b = nodes.row(t[1]), c = nodes.row(t[2]);
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
  }

  Eigen::Vector2d centroid(int e) const {
    const auto t = triangles.row(e);
    return (nodes.row(t[0]) + nodes.row(t[1]) + nodes.row(t[2])).transpose() / 3.0;
  }

  /// Element centroids; the collocation points of the random fields.
  std::vector<Eigen::Vector2d> centroids() const {
    std::vector<Eigen::Vector2d> out(element_count());
    for (int e = 0; e < element_count(); ++e) out[e] = centroid(e);
    return out;
  }

  /// Boundary edges (node pairs) lying on a side with the given tag.
  std::vector<std::pair<int, int>> boundary_edges(BoundaryTag tag) const {
    std::vector<std::pair<int, int>> edges;
    auto idx = [this](int i, int j) { return j * nx + i; };
    if (tag == BoundaryTag::exterior)
      for (int j = 0; j + 1 < ny; ++j) edges.emplace_back(idx(0, j), idx(0, j + 1));
    if (tag == BoundaryTag::interior)
      for (int j = 0; j + 1 < ny; ++j) edges.emplace_back(idx(nx - 1, j), idx(nx - 1, j + 1));
    if (tag == BoundaryTag::insulated)
      for (int i = 0; i + 1 < nx; ++i) {
        edges.emplace_back(idx(i, 0), idx(i + 1, 0));
        edges.emplace_back(idx(i, ny - 1), idx(i + 1, ny - 1));
      }
    return edges;
  }

  void validate() const {
    if (node_count() != nx * ny) throw std::invalid_argument("Mesh: node count mismatch");
    if (static_cast<int>(tags.size()) != node_count())
      throw std::invalid_argument("Mesh: one boundary tag per node required");
    for (int e = 0; e < element_count(); ++e) {
      if (signed_area(e) <= 0.0) throw std::invalid_argument("Mesh: triangle not positively oriented");
      for (int k = 0; k < 3; ++k) {
        const int n = triangles(e, k);
        if (n < 0 || n >= node_count()) throw std::invalid_argument("Mesh: node index out of range");
      }
    }
  }
};

/// Structured nx-by-ny node grid over [0,lx] x [0,ly], each cell split in
/// two triangles; (nx-1)(ny-1)*2 elements. The diagonal flips between the
/// left and right half so meshes with an even cell count are mirror
/// symmetric about the vertical midline.
inline Mesh build_mesh(int nx, int ny, double lx, double ly) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("build_mesh: nx and ny must be >= 2");
  if (!(lx > 0.0) || !(ly > 0.0)) throw std::invalid_argument("build_mesh: lengths must be positive");

  Mesh m;
  m.nx = nx;
  m.ny = ny;
  m.lx = lx;
  m.ly = ly;
  m.nodes.resize(nx * ny, 2);
  m.tags.assign(nx * ny, BoundaryTag::none);
  const double dx = lx / (nx - 1), dy = ly / (ny - 1);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int n = j * nx + i;
      m.nodes(n, 0) = i * dx;
      m.nodes(n, 1) = j * dy;
      if (i == 0)
        m.tags[n] = BoundaryTag::exterior;
      else if (i == nx - 1)
        m.tags[n] = BoundaryTag::interior;
      else if (j == 0 || j == ny - 1)
        m.tags[n] = BoundaryTag::insulated;
    }

  m.triangles.resize((nx - 1) * (ny - 1) * 2, 3);
  int e = 0;
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const int n00 = j * nx + i, n10 = j * nx + i + 1;
      const int n01 = (j + 1) * nx + i, n11 = (j + 1) * nx + i + 1;
      if (2 * i < nx - 2) {
        m.triangles.row(e++) << n00, n10, n11;
        m.triangles.row(e++) << n00, n11, n01;
      } else {
        m.triangles.row(e++) << n00, n10, n01;
        m.triangles.row(e++) << n10, n11, n01;
      }
    }
  m.validate();
  return m;
}

inline std::string mesh_nodes_csv(const Mesh& m) {
  std::ostringstream out;
  out << "node,x,y,tag\n";
  for (int n = 0; n < m.node_count(); ++n)
    out << n << ',' << io::format_double(m.nodes(n, 0)) << ',' << io::format_double(m.nodes(n, 1))
        << ',' << to_string(m.tags[n]) << '\n';
  return out.str();
}

inline std::string mesh_triangles_csv(const Mesh& m) {
  std::ostringstream out;
  out << "element,n1,n2,n3\n";
  for (int e = 0; e < m.element_count(); ++e)
    out << e << ',' << m.triangles(e, 0) << ',' << m.triangles(e, 1) << ',' << m.triangles(e, 2)
        << '\n';
  return out.str();
}

}  // namespace hygropc::fem
