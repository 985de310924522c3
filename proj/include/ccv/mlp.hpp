#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccv/linalg.hpp"
#include "ccv/rng.hpp"

namespace ccv {

// One named contiguous slice of a flat parameter vector.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

// Partition of the flat coordinates [0, d) into parameter tensors. The layer-wise
// control variate uses one baseline per segment.
class ParamLayout {
 public:
  void append(std::string name, std::size_t length);
  // Concatenates `other` after the current segments, prefixing its names.
  void append_layout(const ParamLayout& other, const std::string& prefix = "");

  std::size_t total_dim() const { return total_; }
  std::size_t num_segments() const { return segments_.size(); }
  const Segment& segment(std::size_t i) const { return segments_.at(i); }
  const std::vector<Segment>& segments() const { return segments_; }

  // segment index for every coordinate, length total_dim()
  std::vector<std::uint32_t> segment_of_coordinate() const;

  // Checks contiguity, non-overlap and coverage of [0, total_dim).
  bool valid() const;

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

// Fully connected network: tanh on every hidden layer, identity on the output.
// Parameters live in one flat buffer ordered layer by layer as
// (weight[out x in] row-major, bias[out]).
class Mlp {
 public:
  Mlp() = default;
  // sizes = {in, hidden..., out}; all parameters zero.
  explicit Mlp(std::vector<std::size_t> sizes);

  // Orthogonal init with gain `hidden_gain` on hidden layers and `output_gain`
  // on the last layer; biases zero.
  static Mlp initialized(std::vector<std::size_t> sizes, Rng& rng, double hidden_gain,
                         double output_gain);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  std::size_t num_layers() const { return sizes_.size() - 1; }
  std::size_t param_count() const { return params_.size(); }

  std::span<const double> params() const { return params_; }
  // Any mutable access invalidates outstanding tapes.
  std::span<double> mutable_params();
  void set_params(std::span<const double> values);

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + sizes_[layer] * sizes_[layer + 1];
  }
  const double* weight(std::size_t layer) const { return params_.data() + weight_offset(layer); }
  const double* bias(std::size_t layer) const { return params_.data() + bias_offset(layer); }
  double* mutable_weight(std::size_t layer);
  double* mutable_bias(std::size_t layer);

  ParamLayout layout(const std::string& prefix = "") const;

  std::uint64_t generation() const { return generation_; }

 private:
  void touch();

  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
  std::uint64_t generation_ = 0;
};

// Activations cached by a forward pass: activations[0] is the input and
// activations[l + 1] the output of layer l.
struct Tape {
  const Mlp* net = nullptr;
  std::uint64_t generation = 0;
  std::vector<Vector> activations;

  std::span<const double> output() const { return activations.back(); }
};

struct BatchTape {
  const Mlp* net = nullptr;
  std::uint64_t generation = 0;
  std::vector<Matrix> activations;

  const Matrix& output() const { return activations.back(); }
};

Tape forward(const Mlp& net, std::span<const double> input);

// d(seed . output)/d(params), accumulated into `grad` (length param_count).
void backward_accumulate(const Mlp& net, const Tape& tape, std::span<const double> seed,
                         std::span<double> grad);

Vector backward_per_example(const Mlp& net, const Tape& tape, std::span<const double> seed);

// Row-batched variants. `inputs` is n x input_dim.
BatchTape forward_batch(const Mlp& net, const Matrix& inputs);

// Sum over rows of d(seed_i . output_i)/d(params), accumulated into `grad`.
void backward_batch(const Mlp& net, const BatchTape& tape, const Matrix& seeds,
                    std::span<double> grad);

// Per-example gradients written into rows(i, col_offset .. col_offset+param_count).
void backward_rows(const Mlp& net, const BatchTape& tape, const Matrix& seeds, Matrix& rows,
                   std::size_t col_offset = 0);

// Flat vector of all net parameters followed by `extras`, with the matching
// layout (extras become one segment named `extras_name`).
std::pair<Vector, ParamLayout> flatten(const Mlp& net, std::span<const double> extras,
                                       const std::string& extras_name = "log_std");

// Inverse of flatten; `extras` is resized to the trailing segment.
void unflatten(const ParamLayout& layout, std::span<const double> flat, Mlp& net, Vector& extras);

// Parameter count of a Gaussian MLP policy: weights, biases and log-std.
std::size_t gaussian_policy_param_count(std::size_t obs_dim, std::size_t act_dim,
                                        const std::vector<std::size_t>& hidden);

}  // namespace ccv
