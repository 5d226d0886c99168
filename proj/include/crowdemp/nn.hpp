#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crowdemp/rng.hpp"

namespace crowdemp::nn {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

enum class Activation : std::uint32_t { kTanh = 0, kRelu = 1, kIdentity = 2 };

// Dense feedforward network. All parameters live in one flat vector: for each
// layer, the row-major (out x in) weight matrix followed by the bias vector.
// Batches are column-major: one sample per column.
class Mlp {
 public:
  using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  // Activations recorded by a forward pass, consumed by backward().
  struct Tape {
    std::vector<MatrixXd> activations;  // [0] is the input
  };

  Mlp() = default;
  // Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::vector<int> sizes, Activation hidden, std::uint64_t seed);
  Mlp(std::vector<int> sizes, Activation hidden, VectorXd params);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t layer_count() const { return sizes_.size() - 1; }
  Activation hidden_activation() const { return hidden_; }

  VectorXd& params() { return params_; }
  const VectorXd& params() const { return params_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  RowMajorMap weight(std::size_t layer) const;
  Eigen::Map<const VectorXd> bias(std::size_t layer) const;
  // Offsets of a layer's weight and bias blocks inside params().
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + static_cast<std::size_t>(sizes_[layer + 1] * sizes_[layer]);
  }

  MatrixXd forward(const MatrixXd& x) const;
  MatrixXd forward(const MatrixXd& x, Tape& tape) const;
  // Accumulates d(upstream . output)/d(params) into grad and returns the
  // gradient with respect to the input batch.
  MatrixXd backward(const Tape& tape, const MatrixXd& upstream, VectorXd& grad) const;

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.sizes_ == b.sizes_ && a.hidden_ == b.hidden_ && a.params_ == b.params_;
  }

 private:
  void build_offsets();

  std::vector<int> sizes_;
  Activation hidden_ = Activation::kTanh;
  VectorXd params_;
  std::vector<std::size_t> offsets_;
};

struct Gradients {
  VectorXd params;
  MatrixXd input;
};

// Reverse-mode derivatives of upstream . forward(input).
Gradients gradients(const Mlp& net, const MatrixXd& input, const MatrixXd& upstream);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg);

  // Bias-corrected Adam update. Throws RuntimeFailure on a non-finite gradient.
  void step(VectorXd& params, const VectorXd& grad);

  const VectorXd& first_moment() const { return m_; }
  const VectorXd& second_moment() const { return v_; }
  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  VectorXd m_;
  VectorXd v_;
  long t_ = 0;
};

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

struct DiagGaussian {
  VectorXd mean;
  VectorXd log_std;  // clamped to [kLogStdMin, kLogStdMax] on use
};

double gaussian_log_prob(const DiagGaussian& dist, const VectorXd& x);
// mean + std * eps with eps ~ N(0, I) drawn from a generator seeded by `seed`.
VectorXd gaussian_sample(const DiagGaussian& dist, std::uint64_t seed);

// tanh(u) with u ~ dist. log-density includes the change-of-variables term.
VectorXd squashed_sample(const DiagGaussian& dist, std::uint64_t seed);
double squashed_log_prob(const DiagGaussian& dist, const VectorXd& action);

// log(1 - tanh(u)^2), stable for large |u|.
double log1m_tanh_sq(double u);

// Batched helpers over column-major batches. A Gaussian head stores the mean
// in the first `dim` rows of the network output and log-std in the next `dim`.
struct GaussianHead {
  MatrixXd mean;
  MatrixXd log_std;       // clamped
  MatrixXd clamp_active;  // 1 where the raw log-std was inside the clamp range, else 0
};
GaussianHead split_gaussian_head(const MatrixXd& output, int dim);
// Per-column diagonal Gaussian log-density.
RowVectorXd gaussian_log_prob(const MatrixXd& mean, const MatrixXd& log_std, const MatrixXd& x);
MatrixXd standard_normal_matrix(int rows, int cols, Rng& rng);

// Flat binary checkpoint; layout documented in docs/checkpoint_format.md.
void save_mlp(std::ostream& out, const Mlp& net);
Mlp load_mlp(std::istream& in);
void save_mlp(const std::string& path, const Mlp& net);
Mlp load_mlp(const std::string& path);

// Biases of the log-std half of a Gaussian head set to `value`.
void init_log_std_bias(Mlp& net, int dim, double value);

}  // namespace crowdemp::nn
