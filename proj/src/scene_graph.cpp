#include "lgran/scene_graph.hpp"

#include "lgran/errors.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace lgran {

bool box_valid(const BoundingBox& b, double image_w, double image_h) noexcept {
  constexpr double kSlack = 1e-9;
  return b.w > 0.0 && b.h > 0.0 && b.x >= -kSlack && b.y >= -kSlack && b.x_br() <= image_w + kSlack &&
         b.y_br() <= image_h + kSlack;
}

std::vector<double> StoredFeatureProvider::appearance(const Scene& scene, std::size_t region_index) const {
  const Region& r = scene.regions.at(region_index);
  if (r.appearance.empty()) {
    throw SchemaError("region " + std::to_string(r.id) + " has no stored appearance feature");
  }
  return r.appearance;
}

SpatialFeature spatial_feature(const BoundingBox& box, double image_w, double image_h) {
  if (!(image_w > 0.0) || !(image_h > 0.0)) throw Error(ErrorKind::kGeneric, "degenerate image size");
  return {box.x / image_w, box.y / image_h, box.x_br() / image_w, box.y_br() / image_h,
          box.area() / (image_w * image_h)};
}

EdgeFeature edge_feature(const BoundingBox& bi, const BoundingBox& bj) {
  if (!(bi.w > 0.0) || !(bi.h > 0.0) || !(bj.w > 0.0) || !(bj.h > 0.0)) {
    throw Error(ErrorKind::kGeneric, "edge_feature on a degenerate box");
  }
  const double xc = bi.x_c();
  const double yc = bi.y_c();
  return {(bj.x - xc) / bi.w, (bj.y - yc) / bi.h, (bj.x_br() - xc) / bi.w, (bj.y_br() - yc) / bi.h,
          bj.area() / bi.area()};
}

Tensor ObjectGraph::node_features() const {
  const std::size_t dv = appearance.cols();
  Tensor out = Tensor::matrix(node_count, dv + 5);
  for (std::size_t i = 0; i < node_count; ++i) {
    for (std::size_t c = 0; c < dv; ++c) out.at(i, c) = appearance.at(i, c);
    for (std::size_t c = 0; c < 5; ++c) out.at(i, dv + c) = spatial.at(i, c);
  }
  return out;
}

ObjectGraph build_graph(const Scene& scene, std::size_t k, const FeatureProvider& features) {
  const std::size_t n = scene.regions.size();
  if (n == 0) throw Error(ErrorKind::kGeneric, "build_graph on an empty scene");
  if (k == 0) throw Error(ErrorKind::kGeneric, "build_graph needs k >= 1");

  ObjectGraph g;
  g.node_count = n;
  std::size_t dv = 0;
  std::vector<std::vector<double>> app(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Region& r = scene.regions[i];
    if (!box_valid(r.box, scene.width, scene.height)) {
      throw SchemaError("region " + std::to_string(r.id) + " has an invalid box");
    }
    app[i] = features.appearance(scene, i);
    if (i == 0) dv = app[i].size();
    if (app[i].size() != dv) throw SchemaError("appearance dimension differs across regions");
    g.region_ids.push_back(r.id);
    g.categories.push_back(r.category);
  }
  g.appearance = Tensor::matrix(n, dv);
  g.spatial = Tensor::matrix(n, 5);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(app[i].begin(), app[i].end(), g.appearance.data().begin() + i * dv);
    const SpatialFeature l = spatial_feature(scene.regions[i].box, scene.width, scene.height);
    std::copy(l.begin(), l.end(), g.spatial.data().begin() + i * 5);
  }

  g.intra_neighbors.resize(n);
  g.inter_neighbors.resize(n);
  g.intra_offsets.push_back(0);
  g.inter_offsets.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    const BoundingBox& bi = scene.regions[i].box;
    std::vector<std::tuple<double, int, std::size_t>> same;
    std::vector<std::tuple<double, int, std::size_t>> other;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const BoundingBox& bj = scene.regions[j].box;
      const double d = std::hypot(bj.x_c() - bi.x_c(), bj.y_c() - bi.y_c());
      auto& bucket = scene.regions[j].category == scene.regions[i].category ? same : other;
      bucket.emplace_back(d, scene.regions[j].id, j);
    }
    std::sort(same.begin(), same.end());
    std::sort(other.begin(), other.end());
    for (std::size_t r = 0; r < std::min(k, same.size()); ++r) {
      const std::size_t j = std::get<2>(same[r]);
      g.intra_neighbors[i].push_back(j);
      g.intra_edges.push_back({i, j, edge_feature(bi, scene.regions[j].box)});
    }
    for (std::size_t r = 0; r < std::min(k, other.size()); ++r) {
      const std::size_t j = std::get<2>(other[r]);
      g.inter_neighbors[i].push_back(j);
      g.inter_edges.push_back({i, j, edge_feature(bi, scene.regions[j].box)});
    }
    g.intra_offsets.push_back(g.intra_edges.size());
    g.inter_offsets.push_back(g.inter_edges.size());
  }
  return g;
}

ObjectGraph build_graph(const Scene& scene, std::size_t k) { return build_graph(scene, k, StoredFeatureProvider{}); }

}  // namespace lgran
