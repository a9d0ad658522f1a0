#pragma once

#include "lgran/tensor.hpp"

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace lgran {

/// Axis-aligned box in pixels: top-left corner plus size.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x_br() const noexcept { return x + w; }
  double y_br() const noexcept { return y + h; }
  double x_c() const noexcept { return x + 0.5 * w; }
  double y_c() const noexcept { return y + 0.5 * h; }
  double area() const noexcept { return w * h; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

bool box_valid(const BoundingBox& b, double image_w, double image_h) noexcept;

struct Region {
  int id = 0;
  std::string category;
  BoundingBox box;
  std::map<std::string, std::string> attrs;
  std::vector<double> appearance;  // may be empty when a provider computes it

  friend bool operator==(const Region&, const Region&) = default;
};

struct Scene {
  double width = 0.0;
  double height = 0.0;
  std::vector<Region> regions;

  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Supplies per-region appearance vectors. Implementations must return the
/// same dimension for every region they serve.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::vector<double> appearance(const Scene& scene, std::size_t region_index) const = 0;
};

/// Serves the vectors stored on the regions themselves.
class StoredFeatureProvider final : public FeatureProvider {
 public:
  std::vector<double> appearance(const Scene& scene, std::size_t region_index) const override;
};

using SpatialFeature = std::array<double, 5>;
using EdgeFeature = std::array<double, 5>;

/// [x_tl/W, y_tl/H, x_br/W, y_br/H, w*h/(W*H)]
SpatialFeature spatial_feature(const BoundingBox& box, double image_w, double image_h);

/// Geometry of box j relative to the centre and size of box i.
EdgeFeature edge_feature(const BoundingBox& box_i, const BoundingBox& box_j);

struct GraphEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeFeature feature{};
};

/// Directed object graph over one scene. Node indices follow the scene's
/// region order. Edge lists are grouped by source node in ascending order and
/// within a source by neighbour rank, so `*_offsets` delimit each node's
/// outgoing edges: edges of node i are [offsets[i], offsets[i+1]).
struct ObjectGraph {
  std::size_t node_count = 0;
  std::vector<int> region_ids;
  std::vector<std::string> categories;
  Tensor appearance;  // [N, dv]
  Tensor spatial;     // [N, 5]
  std::vector<std::vector<std::size_t>> intra_neighbors;
  std::vector<std::vector<std::size_t>> inter_neighbors;
  std::vector<GraphEdge> intra_edges;
  std::vector<GraphEdge> inter_edges;
  std::vector<std::size_t> intra_offsets;
  std::vector<std::size_t> inter_offsets;

  std::size_t appearance_dim() const noexcept { return appearance.cols(); }
  /// Raw node feature [v_i, l_i] as a row matrix [N, dv + 5].
  Tensor node_features() const;
};

inline constexpr std::size_t kDefaultNeighbors = 5;

/// Builds the graph: each node links to its k nearest same-category and k
/// nearest other-category regions by box-centre distance, ties broken by
/// lower region id.
ObjectGraph build_graph(const Scene& scene, std::size_t k, const FeatureProvider& features);
ObjectGraph build_graph(const Scene& scene, std::size_t k = kDefaultNeighbors);

}  // namespace lgran
