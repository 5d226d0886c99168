#include "crowdemp/nn.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "crowdemp/error.hpp"

namespace crowdemp::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'R', 'W', 'D', 'M', 'L', 'P', '1'};

void apply_activation(Activation act, MatrixXd& x) {
  switch (act) {
    case Activation::kTanh: x = x.array().tanh(); break;
    case Activation::kRelu: x = x.array().max(0.0); break;
    case Activation::kIdentity: break;
  }
}

// Converts d/d(post-activation) into d/d(pre-activation) in place.
void activation_backward(Activation act, const MatrixXd& post, MatrixXd& grad) {
  switch (act) {
    case Activation::kTanh: grad.array() *= 1.0 - post.array().square(); break;
    case Activation::kRelu: grad.array() *= (post.array() > 0.0).cast<double>(); break;
    case Activation::kIdentity: break;
  }
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw RuntimeFailure("checkpoint truncated");
  return v;
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, Activation hidden, std::uint64_t seed) : sizes_(std::move(sizes)), hidden_(hidden) {
  build_offsets();
  Rng rng(seed);
  for (std::size_t l = 0; l < layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    const std::size_t n = static_cast<std::size_t>(sizes_[l + 1] * (sizes_[l] + 1));
    for (std::size_t i = 0; i < n; ++i) params_[static_cast<Eigen::Index>(offsets_[l] + i)] = uniform(rng, -bound, bound);
  }
}

Mlp::Mlp(std::vector<int> sizes, Activation hidden, VectorXd params)
    : sizes_(std::move(sizes)), hidden_(hidden) {
  const VectorXd given = std::move(params);
  build_offsets();
  if (given.size() != params_.size()) throw ValidationError("Mlp: parameter vector size does not match layer sizes");
  params_ = given;
}

void Mlp::build_offsets() {
  if (sizes_.size() < 2) throw ValidationError("Mlp needs at least an input and an output size");
  for (int s : sizes_)
    if (s < 1) throw ValidationError("Mlp layer sizes must be positive");
  offsets_.clear();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(off);
    off += static_cast<std::size_t>(sizes_[l + 1] * (sizes_[l] + 1));
  }
  params_ = VectorXd::Zero(static_cast<Eigen::Index>(off));
}

Mlp::RowMajorMap Mlp::weight(std::size_t layer) const {
  return RowMajorMap(params_.data() + offsets_[layer], sizes_[layer + 1], sizes_[layer]);
}

Eigen::Map<const VectorXd> Mlp::bias(std::size_t layer) const {
  return Eigen::Map<const VectorXd>(params_.data() + bias_offset(layer), sizes_[layer + 1]);
}

MatrixXd Mlp::forward(const MatrixXd& x) const {
  if (x.rows() != input_size()) {
    std::ostringstream os;
    os << "Mlp::forward: input has " << x.rows() << " rows, expected " << input_size();
    throw ValidationError(os.str());
  }
  MatrixXd a = x;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    MatrixXd z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < layer_count()) apply_activation(hidden_, z);
    a = std::move(z);
  }
  return a;
}

MatrixXd Mlp::forward(const MatrixXd& x, Tape& tape) const {
  if (x.rows() != input_size()) {
    std::ostringstream os;
    os << "Mlp::forward: input has " << x.rows() << " rows, expected " << input_size();
    throw ValidationError(os.str());
  }
  tape.activations.resize(layer_count() + 1);
  tape.activations[0] = x;
  for (std::size_t l = 0; l < layer_count(); ++l) {
    MatrixXd z = weight(l) * tape.activations[l];
    z.colwise() += bias(l);
    if (l + 1 < layer_count()) apply_activation(hidden_, z);
    tape.activations[l + 1] = std::move(z);
  }
  return tape.activations.back();
}

MatrixXd Mlp::backward(const Tape& tape, const MatrixXd& upstream, VectorXd& grad) const {
  if (tape.activations.size() != layer_count() + 1) throw ValidationError("Mlp::backward: tape does not match network");
  if (upstream.rows() != output_size() || upstream.cols() != tape.activations.back().cols())
    throw ValidationError("Mlp::backward: upstream shape mismatch");
  if (grad.size() != params_.size()) grad = VectorXd::Zero(params_.size());

  MatrixXd delta = upstream;
  for (std::size_t l = layer_count(); l-- > 0;) {
    if (l + 1 < layer_count()) activation_backward(hidden_, tape.activations[l + 1], delta);
    const MatrixXd& input = tape.activations[l];
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
        grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
    gw.noalias() += delta * input.transpose();
    Eigen::Map<VectorXd> gb(grad.data() + bias_offset(l), sizes_[l + 1]);
    gb += delta.rowwise().sum();
    delta = weight(l).transpose() * delta;
  }
  return delta;
}

Gradients gradients(const Mlp& net, const MatrixXd& input, const MatrixXd& upstream) {
  Mlp::Tape tape;
  net.forward(input, tape);
  Gradients g;
  g.params = VectorXd::Zero(static_cast<Eigen::Index>(net.parameter_count()));
  g.input = net.backward(tape, upstream, g.params);
  return g;
}

Adam::Adam(std::size_t n, AdamConfig cfg)
    : cfg_(cfg), m_(VectorXd::Zero(static_cast<Eigen::Index>(n))), v_(VectorXd::Zero(static_cast<Eigen::Index>(n))) {}

void Adam::step(VectorXd& params, const VectorXd& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ValidationError("Adam::step: shape mismatch");
  if (!grad.allFinite()) throw RuntimeFailure("Adam::step: non-finite gradient");
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -= cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
}

double log1m_tanh_sq(double u) {
  // log(1 - tanh(u)^2) = 2 * (log 2 - |u| - log1p(exp(-2|u|)))
  const double a = std::abs(u);
  return 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
}

double gaussian_log_prob(const DiagGaussian& dist, const VectorXd& x) {
  if (x.size() != dist.mean.size() || dist.log_std.size() != dist.mean.size())
    throw ValidationError("gaussian_log_prob: dimension mismatch");
  double lp = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double ls = std::clamp(dist.log_std[i], kLogStdMin, kLogStdMax);
    const double z = (x[i] - dist.mean[i]) * std::exp(-ls);
    lp += -0.5 * z * z - ls - kHalfLog2Pi;
  }
  return lp;
}

VectorXd gaussian_sample(const DiagGaussian& dist, std::uint64_t seed) {
  Rng rng(seed);
  VectorXd out(dist.mean.size());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = dist.mean[i] + std::exp(std::clamp(dist.log_std[i], kLogStdMin, kLogStdMax)) * standard_normal(rng);
  return out;
}

VectorXd squashed_sample(const DiagGaussian& dist, std::uint64_t seed) {
  return gaussian_sample(dist, seed).array().tanh();
}

double squashed_log_prob(const DiagGaussian& dist, const VectorXd& action) {
  VectorXd u(action.size());
  double correction = 0.0;
  for (Eigen::Index i = 0; i < action.size(); ++i) {
    if (!(std::abs(action[i]) < 1.0)) return -std::numeric_limits<double>::infinity();
    u[i] = std::atanh(action[i]);
    correction += log1m_tanh_sq(u[i]);
  }
  return gaussian_log_prob(dist, u) - correction;
}

GaussianHead split_gaussian_head(const MatrixXd& output, int dim) {
  if (output.rows() != 2 * dim) throw ValidationError("split_gaussian_head: output must have 2*dim rows");
  GaussianHead h;
  h.mean = output.topRows(dim);
  const MatrixXd raw = output.bottomRows(dim);
  h.log_std = raw.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  h.clamp_active = ((raw.array() > kLogStdMin) && (raw.array() < kLogStdMax)).cast<double>();
  return h;
}

RowVectorXd gaussian_log_prob(const MatrixXd& mean, const MatrixXd& log_std, const MatrixXd& x) {
  const Eigen::ArrayXXd z = (x - mean).array() * (-log_std.array()).exp();
  return (-0.5 * z.square() - log_std.array() - kHalfLog2Pi).colwise().sum().matrix();
}

MatrixXd standard_normal_matrix(int rows, int cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = standard_normal(rng);
  return m;
}

void save_mlp(std::ostream& out, const Mlp& net) {
  out.write(kMagic.data(), kMagic.size());
  write_pod(out, static_cast<std::uint32_t>(net.sizes().size()));
  for (int s : net.sizes()) write_pod(out, static_cast<std::uint32_t>(s));
  write_pod(out, static_cast<std::uint32_t>(net.hidden_activation()));
  out.write(reinterpret_cast<const char*>(net.params().data()),
            static_cast<std::streamsize>(net.parameter_count() * sizeof(double)));
  if (!out) throw RuntimeFailure("failed writing checkpoint");
}

Mlp load_mlp(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw RuntimeFailure("not an MLP checkpoint (bad magic)");
  const auto n = read_pod<std::uint32_t>(in);
  if (n < 2 || n > 64) throw RuntimeFailure("checkpoint has an implausible layer count");
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < n; ++i) sizes.push_back(static_cast<int>(read_pod<std::uint32_t>(in)));
  const auto act = read_pod<std::uint32_t>(in);
  if (act > 2) throw RuntimeFailure("checkpoint has an unknown activation code");
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (sizes[l] < 1 || sizes[l + 1] < 1) throw RuntimeFailure("checkpoint has a non-positive layer size");
    count += static_cast<std::size_t>(sizes[l + 1]) * static_cast<std::size_t>(sizes[l] + 1);
  }
  VectorXd params(static_cast<Eigen::Index>(count));
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw RuntimeFailure("checkpoint truncated");
  return Mlp(sizes, static_cast<Activation>(act), std::move(params));
}

void save_mlp(const std::string& path, const Mlp& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open " + path + " for writing");
  save_mlp(out, net);
}

Mlp load_mlp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open checkpoint " + path);
  return load_mlp(in);
}

void init_log_std_bias(Mlp& net, int dim, double value) {
  const std::size_t last = net.layer_count() - 1;
  if (net.output_size() != 2 * dim) throw ValidationError("init_log_std_bias: output is not a Gaussian head");
  for (int i = 0; i < dim; ++i)
    net.params()[static_cast<Eigen::Index>(net.bias_offset(last) + static_cast<std::size_t>(dim + i))] = value;
}

}  // namespace crowdemp::nn
