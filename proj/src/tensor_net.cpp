#include "stochens/tensor_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "stochens/errors.hpp"

namespace stochens {

std::string to_string(StochasticKind kind) {
  switch (kind) {
    case StochasticKind::None: return "none";
    case StochasticKind::Dropout: return "dropout";
    case StochasticKind::DropConnect: return "dropconnect";
    case StochasticKind::NPExchange: return "npexchange";
  }
  return "none";
}

StochasticKind stochastic_kind_from_string(const std::string& name) {
  if (name == "none") return StochasticKind::None;
  if (name == "dropout") return StochasticKind::Dropout;
  if (name == "dropconnect") return StochasticKind::DropConnect;
  if (name == "npexchange") return StochasticKind::NPExchange;
  throw ConfigError("unknown stochastic kind '" + name + "'");
}

// ---------------------------------------------------------------- MLPArch

void MLPArch::validate() const {
  if (widths.size() < 2) {
    throw ConfigError("architecture needs at least 2 layer widths");
  }
  for (std::size_t w : widths) {
    if (w < 1) throw ConfigError("architecture widths must be >= 1");
  }
}

std::size_t MLPArch::param_count() const {
  std::size_t count = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) count += layer_param_count(l);
  return count;
}

std::size_t MLPArch::weight_offset(std::size_t layer) const {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layer; ++l) offset += layer_param_count(l);
  return offset;
}

std::string MLPArch::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(widths[i]);
  }
  return s;
}

MLPArch MLPArch::parse(const std::string& text) {
  MLPArch arch;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    long long w = 0;
    try {
      w = std::stoll(item, &pos);
    } catch (const std::exception&) {
      throw ParseError("bad architecture width '" + item + "'");
    }
    if (pos != item.size() || w < 1) {
      throw ParseError("bad architecture width '" + item + "'");
    }
    arch.widths.push_back(static_cast<std::size_t>(w));
  }
  if (arch.widths.size() < 2) throw ParseError("architecture '" + text + "' too short");
  return arch;
}

// ------------------------------------------------------------ ParamVector

ParamVector::ParamVector(MLPArch arch) : arch_(std::move(arch)) {
  arch_.validate();
  values_ = Vector::Zero(static_cast<Eigen::Index>(arch_.param_count()));
}

ParamVector::ParamVector(MLPArch arch, Vector values)
    : arch_(std::move(arch)), values_(std::move(values)) {
  arch_.validate();
  if (static_cast<std::size_t>(values_.size()) != arch_.param_count()) {
    throw ShapeError("parameter vector length " + std::to_string(values_.size()) +
                     " does not match architecture count " +
                     std::to_string(arch_.param_count()));
  }
}

Eigen::Map<const RowMajorMatrix> ParamVector::weights(std::size_t layer) const {
  return {values_.data() + arch_.weight_offset(layer),
          static_cast<Eigen::Index>(arch_.widths[layer + 1]),
          static_cast<Eigen::Index>(arch_.widths[layer])};
}

Eigen::Map<RowMajorMatrix> ParamVector::weights(std::size_t layer) {
  return {values_.data() + arch_.weight_offset(layer),
          static_cast<Eigen::Index>(arch_.widths[layer + 1]),
          static_cast<Eigen::Index>(arch_.widths[layer])};
}

Eigen::Map<const Vector> ParamVector::bias(std::size_t layer) const {
  return {values_.data() + arch_.bias_offset(layer),
          static_cast<Eigen::Index>(arch_.widths[layer + 1])};
}

Eigen::Map<Vector> ParamVector::bias(std::size_t layer) {
  return {values_.data() + arch_.bias_offset(layer),
          static_cast<Eigen::Index>(arch_.widths[layer + 1])};
}

void PriorSpec::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("prior precision lambda must be positive and finite");
  }
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(points.rows()) != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(points.rows()) + " points but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (n_classes < 1) throw DomainError("dataset class count must be >= 1");
  if (!points.allFinite()) throw DomainError("dataset contains non-finite points");
  for (int y : labels) {
    if (y < 0 || y >= n_classes) {
      throw DomainError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(n_classes) + ")");
    }
  }
}

// ----------------------------------------------------------- forward pass

namespace {

void check_masks(const MLPArch& arch, const MaskSet& masks) {
  if (masks.kind == StochasticKind::None) return;
  if (masks.layers.size() != arch.num_layers()) {
    throw ShapeError("mask set has " + std::to_string(masks.layers.size()) +
                     " layers, architecture has " + std::to_string(arch.num_layers()));
  }
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const auto& m = masks.layers[l];
    if (m.empty()) continue;
    const std::size_t expected = masks.kind == StochasticKind::DropConnect
                                     ? arch.layer_param_count(l)
                                     : arch.widths[l + 1];
    if (m.size() != expected) {
      throw ShapeError("mask for layer " + std::to_string(l) + " has " +
                       std::to_string(m.size()) + " entries, expected " +
                       std::to_string(expected));
    }
  }
}

/// Flat 0/1 vector over all parameters; unmasked layers are all ones.
Vector dropconnect_flat(const MLPArch& arch, const MaskSet& masks) {
  Vector flat = Vector::Ones(static_cast<Eigen::Index>(arch.param_count()));
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const auto& m = masks.layers[l];
    const std::size_t off = arch.weight_offset(l);
    for (std::size_t j = 0; j < m.size(); ++j) {
      flat[static_cast<Eigen::Index>(off + j)] = m[j];
    }
  }
  return flat;
}

Eigen::RowVectorXd node_mask_row(const std::vector<std::uint8_t>& m) {
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(m.size()));
  for (std::size_t j = 0; j < m.size(); ++j) row[static_cast<Eigen::Index>(j)] = m[j];
  return row;
}

// Forward pass that keeps layer inputs and pre-activations for backprop.
struct Trace {
  std::vector<Matrix> inputs;  // input to layer l
  std::vector<Matrix> pre;     // W x + b of layer l
  std::vector<Matrix> outputs;
  bool keep_outputs = false;
};

Matrix run_forward(const ParamVector& params, const Matrix& points,
                   const MaskSet* masks, Trace* trace) {
  const MLPArch& arch = params.arch();
  if (static_cast<std::size_t>(points.cols()) != arch.input_width()) {
    throw ShapeError("points have " + std::to_string(points.cols()) +
                     " columns, network expects " + std::to_string(arch.input_width()));
  }
  if (!points.allFinite()) throw DomainError("non-finite input point");

  const ParamVector* effective = &params;
  ParamVector connected;
  StochasticKind kind = StochasticKind::None;
  if (masks != nullptr) {
    kind = masks->kind;
    if (kind == StochasticKind::NPExchange) {
      throw DomainError("NPExchange masks need two parameter sets; use apply_np_selection");
    }
    check_masks(arch, *masks);
    if (kind == StochasticKind::DropConnect) {
      connected = ParamVector(arch, params.values().cwiseProduct(dropconnect_flat(arch, *masks)));
      effective = &connected;
    }
  }

  Matrix x = points;
  const std::size_t L = arch.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = x * effective->weights(l).transpose();
    z.rowwise() += effective->bias(l).transpose();
    if (trace) {
      trace->inputs.push_back(x);
      trace->pre.push_back(z);
    }
    if (l + 1 < L) {
      x = z.cwiseMax(0.0);
    } else {
      x = std::move(z);
    }
    if (kind == StochasticKind::Dropout && !masks->layers[l].empty()) {
      x.array().rowwise() *= node_mask_row(masks->layers[l]).array();
    }
    if (trace && trace->keep_outputs) trace->outputs.push_back(x);
  }
  return x;
}

void check_labels(const Dataset& data, std::size_t n_classes) {
  if (static_cast<std::size_t>(data.points.rows()) != data.labels.size()) {
    throw ShapeError("dataset points/labels length mismatch");
  }
  for (int y : data.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) {
      throw DomainError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(n_classes) + ")");
    }
  }
}

}  // namespace

Matrix forward(const ParamVector& params, const Matrix& points, const MaskSet* masks) {
  return run_forward(params, points, masks, nullptr);
}

std::vector<Matrix> layer_outputs(const ParamVector& params, const Matrix& points,
                                  const MaskSet* masks) {
  Trace trace;
  trace.keep_outputs = true;
  run_forward(params, points, masks, &trace);
  return std::move(trace.outputs);
}

Matrix log_softmax(const Matrix& logits) {
  if (!logits.allFinite()) throw DomainError("non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Matrix softmax(const Matrix& logits) {
  if (!logits.allFinite()) throw DomainError("non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

double nll(const ParamVector& params, const Dataset& data, const MaskSet* masks,
           Reduction reduction) {
  if (data.size() == 0) throw DomainError("nll of an empty dataset");
  check_labels(data, params.arch().num_classes());
  const Matrix logp = log_softmax(forward(params, data.points, masks));
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total -= logp(static_cast<Eigen::Index>(i), data.labels[i]);
  }
  return reduction == Reduction::Sum ? total : total / static_cast<double>(data.size());
}

LossGrad nll_with_grad(const ParamVector& params, const Dataset& data, const MaskSet* masks,
                       Reduction reduction) {
  if (data.size() == 0) throw DomainError("nll of an empty dataset");
  const MLPArch& arch = params.arch();
  check_labels(data, arch.num_classes());

  Trace trace;
  const Matrix logits = run_forward(params, data.points, masks, &trace);
  const Matrix logp = log_softmax(logits);
  const double scale = reduction == Reduction::Sum ? 1.0 : 1.0 / static_cast<double>(data.size());

  LossGrad result{0.0, ParamVector(arch)};
  Matrix delta = logp.array().exp();  // dLoss/dlogits = p - onehot(y)
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    result.loss -= logp(row, data.labels[i]);
    delta(row, data.labels[i]) -= 1.0;
  }
  result.loss *= scale;
  delta *= scale;

  const bool dropout = masks && masks->kind == StochasticKind::Dropout;
  const bool dropconnect = masks && masks->kind == StochasticKind::DropConnect;
  Vector connect_mask;
  ParamVector connected;
  const ParamVector* effective = &params;
  if (dropconnect) {
    connect_mask = dropconnect_flat(arch, *masks);
    connected = ParamVector(arch, params.values().cwiseProduct(connect_mask));
    effective = &connected;
  }

  const std::size_t L = arch.num_layers();
  for (std::size_t l = L; l-- > 0;) {
    // delta holds dLoss/d(layer output after mask); undo mask then activation.
    if (dropout && !masks->layers[l].empty()) {
      delta.array().rowwise() *= node_mask_row(masks->layers[l]).array();
    }
    if (l + 1 < L) {
      delta.array() *= (trace.pre[l].array() > 0.0).cast<double>();
    }
    result.grad.weights(l) = delta.transpose() * trace.inputs[l];
    result.grad.bias(l) = delta.colwise().sum().transpose();
    if (l > 0) delta = delta * effective->weights(l);
  }
  if (dropconnect) result.grad.values().array() *= connect_mask.array();
  return result;
}

LossGrad potential_with_grad(const ParamVector& params, const Dataset& data,
                             const PriorSpec& prior) {
  LossGrad out{0.0, ParamVector(params.arch())};
  if (data.size() > 0) out = nll_with_grad(params, data, nullptr, Reduction::Sum);
  out.loss += 0.5 * prior.lambda * params.values().squaredNorm();
  out.grad.values() += prior.lambda * params.values();
  return out;
}

double potential(const ParamVector& params, const Dataset& data, const PriorSpec& prior) {
  double u = 0.5 * prior.lambda * params.values().squaredNorm();
  if (data.size() > 0) u += nll(params, data, nullptr, Reduction::Sum);
  return u;
}

ParamVector grad_potential(const ParamVector& params, const Dataset& data,
                           const PriorSpec& prior) {
  return potential_with_grad(params, data, prior).grad;
}

ParamVector finite_diff_grad(const ParamVector& params, const Dataset& data,
                             const PriorSpec& prior, double h) {
  if (!(h > 0.0)) throw DomainError("finite-difference step must be positive");
  ParamVector grad(params.arch());
  ParamVector probe = params;
  for (Eigen::Index j = 0; j < params.values().size(); ++j) {
    const double orig = params.values()[j];
    probe.values()[j] = orig + h;
    const double up = potential(probe, data, prior);
    probe.values()[j] = orig - h;
    const double down = potential(probe, data, prior);
    probe.values()[j] = orig;
    grad.values()[j] = (up - down) / (2.0 * h);
  }
  return grad;
}

// --------------------------------------------------------- serialization

namespace {

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
}

}  // namespace

void write_params(std::ostream& out, const ParamVector& params) {
  out << "arch=" << params.arch().to_string() << ";count=" << params.size() << '\n';
  for (Eigen::Index j = 0; j < params.values().size(); ++j) {
    const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(params.values()[j]));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw std::runtime_error("failed writing parameter vector");
}

ParamVector read_params(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ParseError("missing parameter header");
  const auto semi = header.find(";count=");
  if (header.rfind("arch=", 0) != 0 || semi == std::string::npos) {
    throw ParseError("malformed parameter header '" + header + "'");
  }
  MLPArch arch = MLPArch::parse(header.substr(5, semi - 5));
  std::size_t count = 0;
  try {
    count = std::stoull(header.substr(semi + 7));
  } catch (const std::exception&) {
    throw ParseError("malformed parameter count in '" + header + "'");
  }
  if (count != arch.param_count()) {
    throw ParseError("parameter count " + std::to_string(count) +
                     " disagrees with architecture " + arch.to_string());
  }
  Vector values(static_cast<Eigen::Index>(count));
  for (std::size_t j = 0; j < count; ++j) {
    std::uint64_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
      throw ParseError("truncated parameter payload");
    }
    values[static_cast<Eigen::Index>(j)] = std::bit_cast<double>(to_little_endian(bits));
  }
  if (!values.allFinite()) throw ParseError("non-finite parameter value");
  return ParamVector(std::move(arch), std::move(values));
}

}  // namespace stochens
