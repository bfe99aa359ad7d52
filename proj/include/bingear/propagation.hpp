#pragma once

// Light graph convolution: layer l = A_norm * layer (l - 1), no feature
// transforms, no nonlinearity, no self loops.

#include <cstddef>
#include <string>
#include <vector>

#include "bingear/error.hpp"
#include "bingear/graph.hpp"
#include "bingear/matrix.hpp"

namespace bingear {

template <typename Real>
struct BasicLayerEmbeddings {
  std::vector<BasicMatrix<Real>> layers;  // L + 1 matrices of shape (M + N) x d

  std::size_t num_layers() const { return layers.empty() ? 0 : layers.size() - 1; }  // L
  std::size_t dim() const { return layers.empty() ? 0 : layers.front().cols(); }
  std::size_t nodes() const { return layers.empty() ? 0 : layers.front().rows(); }

  std::span<const Real> at(std::size_t layer, std::size_t node) const {
    return layers[layer].row(node);
  }
};

using LayerEmbeddings = BasicLayerEmbeddings<float>;

// Score-fusion weights w_0..w_L, proportional to (l + 1) and summing to one.
struct LayerWeights {
  std::vector<float> w;

  std::size_t size() const { return w.size(); }
  float operator[](std::size_t l) const { return w[l]; }
  float squared(std::size_t l) const { return w[l] * w[l]; }
};

inline LayerWeights layer_weights(std::size_t num_layers) {
  LayerWeights lw;
  const double total = static_cast<double>(num_layers + 1) * static_cast<double>(num_layers + 2) / 2.0;
  lw.w.resize(num_layers + 1);
  for (std::size_t l = 0; l <= num_layers; ++l) {
    lw.w[l] = static_cast<float>(static_cast<double>(l + 1) / total);
  }
  return lw;
}

// L = 0 is accepted here (a single base layer) so the same code path serves
// layer-0-only models; the CLI and trainer require L >= 1.
template <typename Real>
BasicLayerEmbeddings<Real> propagate_layers(const BasicMatrix<Real>& base, const NormalizedAdjacency& adj,
                                            std::size_t num_layers) {
  require(base.rows() == adj.nodes(), "propagate: base table row count != node count");
  if (!base.all_finite()) fail(ErrorKind::numeric, "propagate: non-finite value in layer 0");
  BasicLayerEmbeddings<Real> out;
  out.layers.reserve(num_layers + 1);
  out.layers.push_back(base);
  for (std::size_t l = 1; l <= num_layers; ++l) {
    BasicMatrix<Real> next;
    adj.multiply(out.layers.back(), next);
    if (!next.all_finite()) {
      fail(ErrorKind::numeric, "propagate: non-finite value in layer " + std::to_string(l));
    }
    out.layers.push_back(std::move(next));
  }
  return out;
}

template <typename Real>
BasicLayerEmbeddings<Real> propagate(const BasicMatrix<Real>& base, const NormalizedAdjacency& adj,
                                     std::size_t num_layers) {
  require(num_layers >= 1, "propagate: need at least one layer");
  return propagate_layers(base, adj, num_layers);
}

// Pulls per-layer gradients back onto the base table:
//   dL/dbase = sum_l A^l G_l, evaluated as G_0 + A(G_1 + A(G_2 + ...)).
template <typename Real>
BasicMatrix<Real> backpropagate(const std::vector<BasicMatrix<Real>>& layer_grads,
                                const NormalizedAdjacency& adj) {
  require(!layer_grads.empty(), "backpropagate: no layer gradients");
  BasicMatrix<Real> acc = layer_grads.back();
  BasicMatrix<Real> tmp;
  for (std::size_t l = layer_grads.size() - 1; l-- > 0;) {
    adj.multiply(acc, tmp);
    auto dst = tmp.flat();
    auto src = layer_grads[l].flat();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    std::swap(acc, tmp);
  }
  return acc;
}

// Concatenation of w_l * v^(l) over layers, layer-major.
inline std::vector<float> fuse_full(const LayerEmbeddings& le, const LayerWeights& w, std::size_t node) {
  require(node < le.nodes(), "fuse_full: node out of range");
  require(w.size() == le.layers.size(), "fuse_full: weight count != layer count");
  const std::size_t d = le.dim();
  std::vector<float> out(le.layers.size() * d);
  for (std::size_t l = 0; l < le.layers.size(); ++l) {
    const auto v = le.at(l, node);
    for (std::size_t j = 0; j < d; ++j) out[l * d + j] = w[l] * v[j];
  }
  return out;
}

}  // namespace bingear
