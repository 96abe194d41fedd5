#include <fedbatch/nncore.hpp>

#include <random>

namespace fedbatch {

std::size_t ModelSpec::param_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) {
    total += static_cast<std::size_t>(layer_widths[l]) * layer_widths[l + 1] + layer_widths[l + 1];
  }
  return total;
}

std::size_t ModelSpec::weight_offset(std::size_t l) const {
  std::size_t offset = 0;
  for (std::size_t k = 0; k < l; ++k) {
    offset += static_cast<std::size_t>(layer_widths[k]) * layer_widths[k + 1] + layer_widths[k + 1];
  }
  return offset;
}

void ModelSpec::validate() const {
  if (layer_widths.size() < 2) {
    throw std::invalid_argument("model needs at least an input and an output width");
  }
  for (int w : layer_widths) {
    if (w <= 0) throw std::invalid_argument("layer widths must be positive");
  }
  if (bytes_per_element <= 0) throw std::invalid_argument("bytes_per_element must be positive");
}

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector params = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_widths[l];
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    const std::size_t count = static_cast<std::size_t>(fan_in) * spec.layer_widths[l + 1];
    double* w = params.data() + spec.weight_offset(l);
    for (std::size_t k = 0; k < count; ++k) w[k] = normal(rng);
  }
  return params;
}

namespace {

Matrix<double> logits(const ModelSpec& spec, const ParamVector& params,
                      const Matrix<double>& features) {
  if (static_cast<std::size_t>(params.size()) != spec.param_count()) {
    throw std::invalid_argument("parameter vector length does not match model");
  }
  if (features.cols() != spec.input_dim()) {
    throw std::invalid_argument("feature width does not match input dim");
  }
  Matrix<double> current = features;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Matrix<double> next = current * detail::weights(spec, params.data(), l).transpose();
    next.rowwise() += detail::biases(spec, params.data(), l).transpose();
    if (l + 1 < spec.num_layers()) {
      if (spec.activation == Activation::relu) {
        next = next.cwiseMax(0.0);
      } else {
        next = next.array().tanh().matrix();
      }
    }
    current = std::move(next);
  }
  return current;
}

}  // namespace

std::vector<int> predict(const ModelSpec& spec, const ParamVector& params,
                         const Matrix<double>& features) {
  const Matrix<double> out = logits(spec, params, features);
  std::vector<int> labels(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    Eigen::Index best = 0;
    out.row(r).maxCoeff(&best);
    labels[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return labels;
}

double accuracy(const ModelSpec& spec, const ParamVector& params,
                const Matrix<double>& features, std::span<const int> labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw std::invalid_argument("accuracy: features and labels disagree on size");
  }
  if (labels.empty()) return 0.0;
  const std::vector<int> guess = predict(spec, params, features);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) hits += guess[k] == labels[k];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace fedbatch
