#include "ccv/mlp.hpp"

#include <atomic>
#include <cmath>

#include "ccv/kernels.hpp"

namespace ccv {
namespace {

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

void check_tape(const Mlp& net, const Mlp* tape_net, std::uint64_t tape_generation) {
  if (tape_net != &net || tape_generation != net.generation()) {
    throw std::logic_error("stale tape: network changed since forward(); re-run forward");
  }
}

// Rows of `m` (rows x cols, rows <= cols) made orthonormal by modified Gram-Schmidt.
void orthonormalize_rows(std::vector<double>& m, std::size_t rows, std::size_t cols, Rng& rng) {
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < rows; ++r) {
    double* v = m.data() + r * cols;
    for (int attempt = 0;; ++attempt) {
      for (std::size_t p = 0; p < r; ++p) {
        const double* u = m.data() + p * cols;
        k.axpy(-k.dot(u, v, cols), u, v, cols);
      }
      const double norm = std::sqrt(k.sum_sq(v, cols));
      if (norm > 1e-8 || attempt > 8) {
        for (std::size_t c = 0; c < cols; ++c) v[c] /= norm;
        break;
      }
      for (std::size_t c = 0; c < cols; ++c) v[c] = rng.normal();
    }
  }
}

void orthogonal_fill(double* w, std::size_t out, std::size_t in, double gain, Rng& rng) {
  const std::size_t rows = std::min(out, in);
  const std::size_t cols = std::max(out, in);
  std::vector<double> m(rows * cols);
  for (double& x : m) x = rng.normal();
  orthonormalize_rows(m, rows, cols, rng);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) {
      const double v = out <= in ? m[o * cols + i] : m[i * cols + o];
      w[o * in + i] = gain * v;
    }
  }
}

}  // namespace

void ParamLayout::append(std::string name, std::size_t length) {
  segments_.push_back(Segment{std::move(name), total_, length});
  total_ += length;
}

void ParamLayout::append_layout(const ParamLayout& other, const std::string& prefix) {
  for (const auto& s : other.segments_) append(prefix + s.name, s.length);
}

std::vector<std::uint32_t> ParamLayout::segment_of_coordinate() const {
  std::vector<std::uint32_t> out(total_);
  for (std::size_t s = 0; s < segments_.size(); ++s) {
    const auto& seg = segments_[s];
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(seg.offset), seg.length,
                static_cast<std::uint32_t>(s));
  }
  return out;
}

bool ParamLayout::valid() const {
  std::size_t expect = 0;
  for (const auto& s : segments_) {
    if (s.offset != expect || s.length == 0) return false;
    expect += s.length;
  }
  return expect == total_;
}

Mlp::Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
  require_dims(sizes_.size() >= 2, "Mlp: need at least input and output sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    require_dims(sizes_[l] > 0 && sizes_[l + 1] > 0, "Mlp: zero-width layer");
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
  touch();
}

Mlp Mlp::initialized(std::vector<std::size_t> sizes, Rng& rng, double hidden_gain,
                     double output_gain) {
  Mlp net(std::move(sizes));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double gain = l + 1 == net.num_layers() ? output_gain : hidden_gain;
    orthogonal_fill(net.params_.data() + net.weight_offset(l), net.sizes_[l + 1], net.sizes_[l],
                    gain, rng);
  }
  net.touch();
  return net;
}

void Mlp::touch() { generation_ = next_generation(); }

std::span<double> Mlp::mutable_params() {
  touch();
  return params_;
}

void Mlp::set_params(std::span<const double> values) {
  require_dims(values.size() == params_.size(), "Mlp::set_params: length mismatch");
  std::copy(values.begin(), values.end(), params_.begin());
  touch();
}

double* Mlp::mutable_weight(std::size_t layer) {
  touch();
  return params_.data() + weight_offset(layer);
}

double* Mlp::mutable_bias(std::size_t layer) {
  touch();
  return params_.data() + bias_offset(layer);
}

ParamLayout Mlp::layout(const std::string& prefix) const {
  ParamLayout out;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    out.append(prefix + "layer" + std::to_string(l) + ".weight", sizes_[l] * sizes_[l + 1]);
    out.append(prefix + "layer" + std::to_string(l) + ".bias", sizes_[l + 1]);
  }
  return out;
}

Tape forward(const Mlp& net, std::span<const double> input) {
  require_dims(input.size() == net.input_dim(), "forward: input length " +
                                                    std::to_string(input.size()) + " != " +
                                                    std::to_string(net.input_dim()));
  const auto& k = kernels::active();
  Tape tape{&net, net.generation(), {}};
  tape.activations.reserve(net.num_layers() + 1);
  tape.activations.emplace_back(input.begin(), input.end());
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const std::size_t in = net.sizes()[l];
    const std::size_t out = net.sizes()[l + 1];
    const double* w = net.weight(l);
    const double* b = net.bias(l);
    const Vector& x = tape.activations.back();
    Vector y(out);
    const bool hidden = l + 1 < net.num_layers();
    for (std::size_t o = 0; o < out; ++o) {
      const double z = b[o] + k.dot(w + o * in, x.data(), in);
      y[o] = hidden ? std::tanh(z) : z;
    }
    tape.activations.push_back(std::move(y));
  }
  if (!all_finite(tape.output())) throw NumericError("forward: non-finite network output");
  return tape;
}

void backward_accumulate(const Mlp& net, const Tape& tape, std::span<const double> seed,
                         std::span<double> grad) {
  check_tape(net, tape.net, tape.generation);
  require_dims(seed.size() == net.output_dim(), "backward: seed length != output dim");
  require_dims(grad.size() == net.param_count(), "backward: gradient length != param count");
  const auto& k = kernels::active();
  Vector delta(seed.begin(), seed.end());
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const std::size_t in = net.sizes()[l];
    const std::size_t out = net.sizes()[l + 1];
    if (l + 1 < net.num_layers()) {
      const Vector& a = tape.activations[l + 1];
      for (std::size_t o = 0; o < out; ++o) delta[o] *= 1.0 - a[o] * a[o];
    }
    const Vector& x = tape.activations[l];
    double* gw = grad.data() + net.weight_offset(l);
    double* gb = grad.data() + net.bias_offset(l);
    const double* w = net.weight(l);
    Vector upstream(l > 0 ? in : 0, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      k.axpy(d, x.data(), gw + o * in, in);
      gb[o] += d;
      if (l > 0) k.axpy(d, w + o * in, upstream.data(), in);
    }
    delta = std::move(upstream);
  }
}

Vector backward_per_example(const Mlp& net, const Tape& tape, std::span<const double> seed) {
  Vector grad(net.param_count(), 0.0);
  backward_accumulate(net, tape, seed, grad);
  return grad;
}

namespace {

void apply_tanh_derivative(Matrix& delta, const Matrix& activation) {
  auto dd = delta.data();
  auto ad = activation.data();
  for (std::size_t t = 0; t < dd.size(); ++t) dd[t] *= 1.0 - ad[t] * ad[t];
}

}  // namespace

BatchTape forward_batch(const Mlp& net, const Matrix& inputs) {
  require_dims(inputs.cols() == net.input_dim(), "forward_batch: input width != input dim");
  const auto& k = kernels::active();
  const std::size_t n = inputs.rows();
  BatchTape tape{&net, net.generation(), {}};
  tape.activations.reserve(net.num_layers() + 1);
  tape.activations.push_back(inputs);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const std::size_t in = net.sizes()[l];
    const std::size_t out = net.sizes()[l + 1];
    const double* b = net.bias(l);
    Matrix y(n, out);
    for (std::size_t i = 0; i < n; ++i) std::copy(b, b + out, y.row(i).begin());
    k.gemm_nt(n, out, in, tape.activations.back().data().data(), in, net.weight(l), in,
              y.data().data(), out);
    if (l + 1 < net.num_layers()) {
      for (double& v : y.data()) v = std::tanh(v);
    }
    tape.activations.push_back(std::move(y));
  }
  if (!tape.output().all_finite()) throw NumericError("forward_batch: non-finite network output");
  return tape;
}

void backward_batch(const Mlp& net, const BatchTape& tape, const Matrix& seeds,
                    std::span<double> grad) {
  check_tape(net, tape.net, tape.generation);
  const std::size_t n = tape.activations.front().rows();
  require_dims(seeds.rows() == n && seeds.cols() == net.output_dim(),
               "backward_batch: seed shape mismatch");
  require_dims(grad.size() == net.param_count(), "backward_batch: gradient length != param count");
  const auto& k = kernels::active();
  Matrix delta = seeds;
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const std::size_t in = net.sizes()[l];
    const std::size_t out = net.sizes()[l + 1];
    if (l + 1 < net.num_layers()) apply_tanh_derivative(delta, tape.activations[l + 1]);
    const Matrix& x = tape.activations[l];
    double* gw = grad.data() + net.weight_offset(l);
    double* gb = grad.data() + net.bias_offset(l);
    k.gemm_tn(out, in, n, delta.data().data(), out, x.data().data(), in, gw, in);
    Vector bias_sum(out, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = delta.row(i);
      for (std::size_t o = 0; o < out; ++o) bias_sum[o] += row[o];
    }
    for (std::size_t o = 0; o < out; ++o) gb[o] += bias_sum[o];
    if (l == 0) break;
    Matrix upstream(n, in, 0.0);
    k.gemm(n, in, out, delta.data().data(), out, net.weight(l), in, upstream.data().data(), in);
    delta = std::move(upstream);
  }
}

void backward_rows(const Mlp& net, const BatchTape& tape, const Matrix& seeds, Matrix& rows,
                   std::size_t col_offset) {
  check_tape(net, tape.net, tape.generation);
  const std::size_t n = tape.activations.front().rows();
  require_dims(seeds.rows() == n && seeds.cols() == net.output_dim(),
               "backward_rows: seed shape mismatch");
  require_dims(rows.rows() == n && rows.cols() >= col_offset + net.param_count(),
               "backward_rows: output shape mismatch");
  const auto& k = kernels::active();
  Matrix delta = seeds;
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const std::size_t in = net.sizes()[l];
    const std::size_t out = net.sizes()[l + 1];
    if (l + 1 < net.num_layers()) apply_tanh_derivative(delta, tape.activations[l + 1]);
    const Matrix& x = tape.activations[l];
    for (std::size_t i = 0; i < n; ++i) {
      double* gw = rows.row(i).data() + col_offset + net.weight_offset(l);
      double* gb = rows.row(i).data() + col_offset + net.bias_offset(l);
      const double* xi = x.row(i).data();
      const double* di = delta.row(i).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double d = di[o];
        double* g = gw + o * in;
        for (std::size_t c = 0; c < in; ++c) g[c] = d * xi[c];
        gb[o] = d;
      }
    }
    if (l == 0) break;
    Matrix upstream(n, in, 0.0);
    k.gemm(n, in, out, delta.data().data(), out, net.weight(l), in, upstream.data().data(), in);
    delta = std::move(upstream);
  }
}

std::pair<Vector, ParamLayout> flatten(const Mlp& net, std::span<const double> extras,
                                       const std::string& extras_name) {
  ParamLayout layout = net.layout();
  Vector flat(net.params().begin(), net.params().end());
  if (!extras.empty()) {
    layout.append(extras_name, extras.size());
    flat.insert(flat.end(), extras.begin(), extras.end());
  }
  return {std::move(flat), std::move(layout)};
}

void unflatten(const ParamLayout& layout, std::span<const double> flat, Mlp& net, Vector& extras) {
  require_dims(flat.size() == layout.total_dim(), "unflatten: vector length != layout total_dim");
  require_dims(layout.total_dim() >= net.param_count(), "unflatten: layout smaller than network");
  net.set_params(flat.first(net.param_count()));
  extras.assign(flat.begin() + static_cast<std::ptrdiff_t>(net.param_count()), flat.end());
}

std::size_t gaussian_policy_param_count(std::size_t obs_dim, std::size_t act_dim,
                                        const std::vector<std::size_t>& hidden) {
  std::size_t total = 0;
  std::size_t in = obs_dim;
  for (std::size_t h : hidden) {
    total += in * h + h;
    in = h;
  }
  return total + in * act_dim + act_dim + act_dim;
}

}  // namespace ccv
