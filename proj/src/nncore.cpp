#include "proxyfair/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace proxyfair::nn {

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softmax") return Activation::softmax;
  if (name == "gelu") return Activation::gelu;
  throw Error("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
    case Activation::gelu: return "gelu";
  }
  return "?";
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

inline double gelu_prime(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

}  // namespace

Matrix softmax_rows(const Matrix& z) {
  Matrix out(z.rows(), z.cols());
  for (Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    out.row(r) = (z.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix activate(const Matrix& z, Activation a) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::sigmoid: return z.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::softmax: return softmax_rows(z);
    case Activation::gelu: return z.unaryExpr([](double v) { return gelu(v); });
  }
  return z;
}

Matrix activation_backward(const Matrix& z, const Matrix& a, const Matrix& g, Activation act) {
  switch (act) {
    case Activation::identity: return g;
    case Activation::tanh: return (g.array() * (1.0 - a.array().square())).matrix();
    case Activation::relu: return (g.array() * (z.array() > 0.0).cast<double>()).matrix();
    case Activation::sigmoid: return (g.array() * a.array() * (1.0 - a.array())).matrix();
    case Activation::softmax: {
      Matrix out(g.rows(), g.cols());
      for (Index r = 0; r < g.rows(); ++r) {
        const double dot = g.row(r).dot(a.row(r));
        out.row(r) = (a.row(r).array() * (g.row(r).array() - dot)).matrix();
      }
      return out;
    }
    case Activation::gelu: return (g.array() * z.unaryExpr([](double v) { return gelu_prime(v); }).array()).matrix();
  }
  return g;
}

Dense::Dense(const std::string& name, Index in, Index out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix w(out, in);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  weight = Parameter(name + ".weight", std::move(w));
  bias = Parameter(name + ".bias", Matrix::Zero(1, out));
}

Dense::Dense(const std::string& name, Matrix w, RowVector b) {
  if (b.size() != w.rows())
    throw ShapeError(name + ": bias length " + std::to_string(b.size()) + " does not match weight " +
                     shape_string(w.rows(), w.cols()));
  weight = Parameter(name + ".weight", std::move(w));
  bias = Parameter(name + ".bias", Matrix(b));
}

Matrix Dense::affine(const Matrix& x) const {
  if (x.cols() != in_dim())
    throw ShapeError(weight.name + ": input " + shape_string(x.rows(), x.cols()) + " does not match weight " +
                     shape_string(weight.value.rows(), weight.value.cols()) + " (expects width " +
                     std::to_string(in_dim()) + ")");
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Dense::backward(const Matrix& x, const Matrix& g) {
  weight.grad.noalias() += g.transpose() * x;
  bias.grad.row(0) += g.colwise().sum();
  return g * weight.value;
}

Matrix dense_forward(const Dense& layer, const Matrix& input, Activation act) { return layer.forward(input, act); }

LayerNorm::LayerNorm(const std::string& name, Index width)
    : gain(name + ".gain", Matrix::Ones(1, width)), shift(name + ".shift", Matrix::Zero(1, width)) {}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const Index n = x.rows(), d = x.cols();
  Matrix xhat(n, d);
  Vector inv(n);
  for (Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    inv(r) = 1.0 / std::sqrt(var + epsilon);
    xhat.row(r) = (x.row(r).array() - mean) * inv(r);
  }
  Matrix y = (xhat.array().rowwise() * gain.value.row(0).array()).matrix();
  y.rowwise() += shift.value.row(0);
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& g) {
  const Matrix& xhat = cache.normalized;
  gain.grad.row(0) += (g.array() * xhat.array()).colwise().sum().matrix();
  shift.grad.row(0) += g.colwise().sum();
  const Matrix gx = (g.array().rowwise() * gain.value.row(0).array()).matrix();
  const auto d = static_cast<double>(g.cols());
  Matrix out(g.rows(), g.cols());
  for (Index r = 0; r < g.rows(); ++r) {
    const double mean_g = gx.row(r).mean();
    const double mean_gx = gx.row(r).dot(xhat.row(r)) / d;
    out.row(r) = cache.inv_std(r) * (gx.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
  }
  return out;
}

ReconMode parse_recon_mode(const std::string& name) {
  if (name == "mse") return ReconMode::mse;
  if (name == "mae") return ReconMode::mae;
  throw Error("unknown reconstruction mode '" + name + "'");
}

std::string to_string(ReconMode m) { return m == ReconMode::mse ? "mse" : "mae"; }

double loss_reconstruction(const Matrix& x, const Matrix& x_hat, ReconMode mode, Matrix* grad) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols())
    throw ShapeError("reconstruction loss: " + shape_string(x.rows(), x.cols()) + " vs " +
                     shape_string(x_hat.rows(), x_hat.cols()));
  if (x.size() == 0) return 0.0;
  const auto count = static_cast<double>(x.size());
  const Matrix diff = x_hat - x;
  if (mode == ReconMode::mse) {
    if (grad) *grad = diff * (2.0 / count);
    return diff.squaredNorm() / count;
  }
  if (grad) *grad = diff.unaryExpr([count](double v) { return (v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0)) / count; });
  return diff.cwiseAbs().sum() / count;
}

double loss_cross_entropy(const Matrix& p, const Matrix& y, std::span<const std::uint8_t> mask) {
  if (p.rows() != y.rows() || p.cols() != y.cols() || static_cast<std::size_t>(p.rows()) != mask.size())
    throw ShapeError("cross entropy: p " + shape_string(p.rows(), p.cols()) + ", targets " +
                     shape_string(y.rows(), y.cols()) + ", mask " + std::to_string(mask.size()));
  double total = 0.0;
  std::size_t count = 0;
  for (Index r = 0; r < p.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    ++count;
    for (Index c = 0; c < p.cols(); ++c)
      if (y(r, c) != 0.0) total -= y(r, c) * std::log(std::max(p(r, c), kProbFloor));
  }
  if (count == 0) {
    warn("cross entropy over an empty mask");
    return 0.0;
  }
  return total / static_cast<double>(count);
}

Matrix softmax_cross_entropy_grad(const Matrix& p, std::span<const int> target, std::span<const std::uint8_t> mask,
                                  double denominator) {
  Matrix g = Matrix::Zero(p.rows(), p.cols());
  if (denominator <= 0) return g;
  for (Index r = 0; r < p.rows(); ++r) {
    const auto k = static_cast<std::size_t>(r);
    if (!mask[k]) continue;
    g.row(r) = p.row(r) / denominator;
    g(r, target[k]) -= 1.0 / denominator;
  }
  return g;
}

namespace {

void check_distribution_rows(const Matrix& m, const char* which) {
  for (Index r = 0; r < m.rows(); ++r) {
    if (std::abs(m.row(r).sum() - 1.0) > 1e-6 || m.row(r).minCoeff() < 0.0)
      throw Error(std::string("kl: row ") + std::to_string(r) + " of " + which + " is not a probability vector");
  }
}

double row_kl(const Matrix& p, const Matrix& q, Index r) {
  double kl = 0.0;
  for (Index c = 0; c < p.cols(); ++c) {
    const double pc = p(r, c);
    if (pc <= 0.0) continue;
    kl += pc * (std::log(pc) - std::log(std::max(q(r, c), kProbFloor)));
  }
  return kl;
}

}  // namespace

double loss_kl(const Matrix& p, const Matrix& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw ShapeError("kl: " + shape_string(p.rows(), p.cols()) + " vs " + shape_string(q.rows(), q.cols()));
  check_distribution_rows(p, "p");
  check_distribution_rows(q, "q");
  if (p.rows() == 0) return 0.0;
  double total = 0.0;
  for (Index r = 0; r < p.rows(); ++r) total += row_kl(p, q, r);
  return std::max(0.0, total / static_cast<double>(p.rows()));
}

Matrix kl_softmax_grad(const Matrix& p, const Matrix& q) {
  Matrix g(p.rows(), p.cols());
  const auto n = static_cast<double>(p.rows());
  for (Index r = 0; r < p.rows(); ++r) {
    const double kl = row_kl(p, q, r);
    for (Index c = 0; c < p.cols(); ++c) {
      const double pc = std::max(p(r, c), kProbFloor);
      g(r, c) = p(r, c) * (std::log(pc) - std::log(std::max(q(r, c), kProbFloor)) - kl) / n;
    }
  }
  return g;
}

double bce_with_logits(const Vector& z, std::span<const int> y, Vector* grad) {
  if (static_cast<std::size_t>(z.size()) != y.size()) throw ShapeError("bce: logits/labels length mismatch");
  if (z.size() == 0) return 0.0;
  const auto n = static_cast<double>(z.size());
  double total = 0.0;
  if (grad) grad->resize(z.size());
  for (Index i = 0; i < z.size(); ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    total += softplus(z(i)) - yi * z(i);
    if (grad) (*grad)(i) = (sigmoid(z(i)) - yi) / n;
  }
  return total / n;
}

OptimizerState make_adam_state(const ParameterList& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  for (const auto* p : params) {
    s.first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    s.second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

void adam_step(const ParameterList& params, OptimizerState& state) {
  if (params.size() != state.first_moment.size()) throw ShapeError("adam: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    if (p.grad.rows() != state.first_moment[i].rows() || p.grad.cols() != state.first_moment[i].cols())
      throw ShapeError("adam: gradient of '" + p.name + "' has shape " + shape_string(p.grad.rows(), p.grad.cols()));
    if (!p.grad.allFinite()) throw Error("adam: non-finite gradient in parameter '" + p.name + "'");
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * p.grad;
    v = c.beta2 * v + (1.0 - c.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  }
}

Adam::Adam(ParameterList params, AdamConfig config)
    : params_(std::move(params)), state_(make_adam_state(params_, config)) {}

void Adam::zero_grad() { zero_grads(params_); }

void TrainConfig::validate() const {
  if (epochs <= 0) throw Error("epochs must be positive");
  if (batch_size <= 0) throw Error("batch size must be positive");
  if (!(learning_rate > 0)) throw Error("learning rate must be positive");
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch)
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch)));
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(static_cast<Index>(rows[i]));
  return out;
}

void zero_grads(const ParameterList& params) {
  for (auto* p : params) p->zero_grad();
}

bool all_finite(const ParameterList& params) {
  return std::all_of(params.begin(), params.end(), [](const Parameter* p) { return p->value.allFinite(); });
}

GradCheckResult grad_check(const ParameterList& params, const std::function<double()>& loss_and_grad,
                           const std::function<double()>& loss, double epsilon, int samples, std::uint64_t seed,
                           double floor) {
  loss_and_grad();
  std::vector<Matrix> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  Rng rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = *params[pi];
    const Index size = p.value.size();
    std::vector<Index> entries(static_cast<std::size_t>(size));
    std::iota(entries.begin(), entries.end(), Index{0});
    if (size > samples) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(static_cast<std::size_t>(samples));
    }
    for (Index e : entries) {
      double& v = p.value.data()[e];
      const double saved = v;
      v = saved + epsilon;
      const double up = loss();
      v = saved - epsilon;
      const double down = loss();
      v = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[pi].data()[e];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
      ++result.checked;
      if (result.worst_entry < 0 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_parameter = p.name;
        result.worst_entry = e;
      }
    }
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& stem, const ParameterList& params, const Json& metadata) {
  Json tensors = Json::array();
  std::string blob;
  for (const auto* p : params) {
    tensors.push_back({{"name", p->name},
                       {"shape", {p->value.rows(), p->value.cols()}},
                       {"offset", blob.size() / sizeof(double)}});
    const auto bytes = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    const auto start = blob.size();
    blob.resize(start + bytes);
    std::memcpy(blob.data() + start, p->value.data(), bytes);
  }
  auto bin = stem;
  bin += ".bin";
  auto manifest_path = stem;
  manifest_path += ".json";
  Json manifest = {{"format", "f64-le-rowmajor"},
                   {"tensors", tensors},
                   {"metadata", metadata},
                   {"payload_hash", hex64(fnv1a(blob))}};
  atomic_write(bin, blob);
  write_json(manifest_path, manifest);
}

Json load_checkpoint(const std::filesystem::path& stem, const ParameterList& params) {
  auto bin = stem;
  bin += ".bin";
  auto manifest_path = stem;
  manifest_path += ".json";
  const Json manifest = read_json(manifest_path);
  const std::string blob = read_file(bin);
  if (manifest.at("payload_hash").get<std::string>() != hex64(fnv1a(blob)))
    throw Error("checkpoint payload does not match manifest: " + bin.string());
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw ShapeError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& t = tensors[i];
    const auto rows = t.at("shape")[0].get<Index>(), cols = t.at("shape")[1].get<Index>();
    if (t.at("name").get<std::string>() != p.name || rows != p.value.rows() || cols != p.value.cols())
      throw ShapeError("checkpoint tensor '" + t.at("name").get<std::string>() + "' " + shape_string(rows, cols) +
                       " does not match '" + p.name + "' " + shape_string(p.value.rows(), p.value.cols()));
    const auto offset = t.at("offset").get<std::size_t>() * sizeof(double);
    std::memcpy(p.value.data(), blob.data() + offset, static_cast<std::size_t>(p.value.size()) * sizeof(double));
    p.zero_grad();
  }
  return manifest.at("metadata");
}

}  // namespace proxyfair::nn
