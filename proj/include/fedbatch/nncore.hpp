#pragma once

// Minimal dense MLP: softmax cross-entropy loss, exact mean-gradient
// backpropagation and plain SGD. Everything here is a pure function of its
// arguments; the only state is the optional Workspace a caller may reuse.
//
// Parameter layout, for each consecutive layer pair (in -> out):
//   weights: out x in, column-major
//   biases : out
// concatenated in layer order.

#include <fedbatch/core.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedbatch {

enum class Activation { relu, tanh };

struct ModelSpec {
  std::vector<int> layer_widths;  // input dim ... number of classes
  Activation activation = Activation::relu;
  int bytes_per_element = 8;

  int input_dim() const { return layer_widths.front(); }
  int num_classes() const { return layer_widths.back(); }
  std::size_t num_layers() const { return layer_widths.size() - 1; }
  std::size_t param_count() const;

  /// Offset of layer l's weight block inside the flat parameter vector.
  std::size_t weight_offset(std::size_t l) const;
  std::size_t bias_offset(std::size_t l) const {
    return weight_offset(l) +
           static_cast<std::size_t>(layer_widths[l]) * layer_widths[l + 1];
  }

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
};

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

template <typename Scalar>
struct BatchT {
  Matrix<Scalar> features;  // b x input_dim, one sample per row
  std::vector<int> labels;  // b entries

  Eigen::Index size() const { return features.rows(); }
};

using Batch = BatchT<double>;

/// Per-layer buffers kept alive across backward() calls.
///
/// activations[l] holds the output of layer l (b x width[l+1]); during the
/// backward sweep the same buffers are overwritten with the layer deltas, so
/// the live footprint is exactly sum(hidden + output widths) * b elements
/// plus a fixed-size chunk buffer.
template <typename Scalar>
struct Workspace {
  static constexpr Eigen::Index kChunkRows = 64;

  std::vector<Matrix<Scalar>> activations;
  Matrix<Scalar> chunk;

  std::size_t bytes() const {
    std::size_t total = static_cast<std::size_t>(chunk.size());
    for (const auto& a : activations) total += static_cast<std::size_t>(a.size());
    return total * sizeof(Scalar);
  }
};

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

namespace detail {

template <typename Scalar>
void check_shapes(const ModelSpec& spec, Eigen::Index params_size,
                  const BatchT<Scalar>& batch) {
  if (static_cast<std::size_t>(params_size) != spec.param_count()) {
    throw std::invalid_argument("parameter vector length " +
                                std::to_string(params_size) + " does not match model (" +
                                std::to_string(spec.param_count()) + ")");
  }
  if (batch.features.cols() != spec.input_dim()) {
    throw std::invalid_argument("batch feature width " +
                                std::to_string(batch.features.cols()) +
                                " does not match input dim " +
                                std::to_string(spec.input_dim()));
  }
  if (static_cast<std::size_t>(batch.features.rows()) != batch.labels.size()) {
    throw std::invalid_argument("batch features and labels disagree on size");
  }
  if (batch.features.rows() == 0) throw std::invalid_argument("empty batch");
  for (int y : batch.labels) {
    if (y < 0 || y >= spec.num_classes()) {
      throw std::invalid_argument("label " + std::to_string(y) + " out of range");
    }
  }
}

template <typename Scalar>
Eigen::Map<const Matrix<Scalar>> weights(const ModelSpec& spec, const Scalar* params,
                                         std::size_t l) {
  return {params + spec.weight_offset(l), spec.layer_widths[l + 1], spec.layer_widths[l]};
}

template <typename Scalar>
Eigen::Map<const Vector<Scalar>> biases(const ModelSpec& spec, const Scalar* params,
                                        std::size_t l) {
  return {params + spec.bias_offset(l), spec.layer_widths[l + 1]};
}

// Forward pass into ws.activations; the last buffer ends up holding softmax
// probabilities. Returns the mean cross-entropy.
template <typename Scalar>
Scalar forward_into(const ModelSpec& spec, const Scalar* params, const BatchT<Scalar>& batch,
                    Workspace<Scalar>& ws) {
  const std::size_t layers = spec.num_layers();
  const Eigen::Index b = batch.size();
  ws.activations.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    ws.activations[l].resize(b, spec.layer_widths[l + 1]);
    const auto& input = l == 0 ? batch.features : ws.activations[l - 1];
    auto& out = ws.activations[l];
    out.noalias() = input * weights(spec, params, l).transpose();
    out.rowwise() += biases(spec, params, l).transpose();
    if (l + 1 < layers) {
      if (spec.activation == Activation::relu) {
        out = out.cwiseMax(Scalar(0));
      } else {
        out = out.array().tanh().matrix();
      }
    }
  }

  auto& logits = ws.activations.back();
  Scalar loss = 0;
  for (Eigen::Index s = 0; s < b; ++s) {
    auto row = logits.row(s);
    const Scalar top = row.maxCoeff();
    row.array() -= top;
    const Scalar log_sum = std::log(row.array().exp().sum());
    loss -= row(batch.labels[static_cast<std::size_t>(s)]) - log_sum;
    row = (row.array() - log_sum).exp().matrix();
  }
  return loss / static_cast<Scalar>(b);
}

}  // namespace detail

template <typename Scalar>
Scalar forward_loss(const ModelSpec& spec, const Vector<Scalar>& params,
                    const BatchT<Scalar>& batch) {
  detail::check_shapes(spec, params.size(), batch);
  Workspace<Scalar> ws;
  return detail::forward_into(spec, params.data(), batch, ws);
}

template <typename Scalar>
struct LossAndGradient {
  Scalar loss;
  Vector<Scalar> grad;
};

/// Mean loss and mean gradient (1/b) * sum_s dL_s/dw over the batch.
template <typename Scalar>
LossAndGradient<Scalar> backward(const ModelSpec& spec, const Vector<Scalar>& params,
                                 const BatchT<Scalar>& batch, Workspace<Scalar>& ws) {
  detail::check_shapes(spec, params.size(), batch);
  const Scalar* w = params.data();
  const Scalar loss = detail::forward_into(spec, w, batch, ws);

  const Eigen::Index b = batch.size();
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(b);

  // d loss / d logits = (softmax - onehot) / b, written over the probabilities.
  auto& top = ws.activations.back();
  for (Eigen::Index s = 0; s < b; ++s) top(s, batch.labels[static_cast<std::size_t>(s)]) -= 1;
  top *= inv_b;

  Vector<Scalar> grad(params.size());
  int max_width = 0;
  for (int width : spec.layer_widths) max_width = std::max(max_width, width);
  ws.chunk.resize(std::min<Eigen::Index>(b, Workspace<Scalar>::kChunkRows), max_width);

  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const auto& delta = ws.activations[l];
    const auto& input = l == 0 ? batch.features : ws.activations[l - 1];
    const int in = spec.layer_widths[l];
    const int out = spec.layer_widths[l + 1];

    Eigen::Map<Matrix<Scalar>> grad_w(grad.data() + spec.weight_offset(l), out, in);
    grad_w.noalias() = delta.transpose() * input;
    Eigen::Map<Vector<Scalar>>(grad.data() + spec.bias_offset(l), out) =
        delta.colwise().sum().transpose();

    if (l == 0) break;

    // delta_{l-1} = (delta_l * W_l) .* f'(a_{l-1}), overwriting a_{l-1} in chunks.
    auto& prev = ws.activations[l - 1];
    const auto weight = detail::weights(spec, w, l);
    for (Eigen::Index r = 0; r < b; r += Workspace<Scalar>::kChunkRows) {
      const Eigen::Index rows = std::min(Workspace<Scalar>::kChunkRows, b - r);
      auto back = ws.chunk.topLeftCorner(rows, in);
      back.noalias() = delta.middleRows(r, rows) * weight;
      auto act = prev.middleRows(r, rows).array();
      if (spec.activation == Activation::relu) {
        act = (act > Scalar(0)).select(back.array(), Scalar(0));
      } else {
        act = (Scalar(1) - act.square()) * back.array();
      }
    }
  }
  return {loss, std::move(grad)};
}

template <typename Scalar>
LossAndGradient<Scalar> backward(const ModelSpec& spec, const Vector<Scalar>& params,
                                 const BatchT<Scalar>& batch) {
  Workspace<Scalar> ws;
  return backward(spec, params, batch, ws);
}

/// w - lr * g.
template <typename Scalar>
Vector<Scalar> sgd_step(const Vector<Scalar>& params, const Vector<Scalar>& grad, Scalar lr) {
  if (params.size() != grad.size()) {
    throw std::invalid_argument("sgd_step: parameter and gradient lengths differ");
  }
  if (!(lr >= 0)) throw std::invalid_argument("sgd_step: learning rate must be nonnegative");
  return params - lr * grad;
}

/// Argmax predictions.
std::vector<int> predict(const ModelSpec& spec, const ParamVector& params,
                         const Matrix<double>& features);

/// Fraction of rows whose argmax prediction equals the label.
double accuracy(const ModelSpec& spec, const ParamVector& params,
                const Matrix<double>& features, std::span<const int> labels);

}  // namespace fedbatch
