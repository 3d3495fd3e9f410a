#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "orbitfed/dataset.hpp"
#include "orbitfed/error.hpp"
#include "orbitfed/parallel.hpp"
#include "orbitfed/rng.hpp"
#include "orbitfed/scenario.hpp"

namespace orbitfed {

/// Flat parameters of a dense network [d, h..., C]: per layer W (out x in, row-major) then b.
/// Hidden layers use tanh; the output is a softmax. [d, C] is multinomial logistic regression.
struct ModelParams {
  ModelLayout layout;
  std::vector<double> values;

  std::size_t param_count() const noexcept { return values.size(); }
  ModelFootprint footprint(int bits_per_param = 32, double sample_bits = 6272.0) const {
    return {values.size(), bits_per_param, sample_bits};
  }
  bool finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }
};

enum class LrRule { constant, inverse_round };

struct LrSchedule {
  LrRule rule = LrRule::constant;
  double eta0 = 0.05;

  /// η_r; inverse_round gives η0/(1 + r).
  double at(int round) const noexcept {
    return rule == LrRule::constant ? eta0 : eta0 / (1.0 + static_cast<double>(round));
  }
};

struct TrainConfig {
  LrSchedule lr;
  std::size_t batch_client = 32;     ///< λ_C
  std::size_t batch_satellite = 32;  ///< λ_S
  double momentum = 0.9;
  double prox_mu = 0.0;  ///< FedProx μ; 0 is plain FedAvg
  int rounds = 20;
  std::uint64_t seed = 1;
  bool single_step = false;  ///< one λ-sized step per round instead of a pass
};

inline ModelParams init_model(const ModelLayout& layout, std::uint64_t seed) {
  ModelParams m;
  m.layout = layout;
  m.values.assign(layout_param_count(layout), 0.0);
  Rng rng(derive_seed(seed, {0x696e6974ULL}));
  std::size_t off = 0;
  for (std::size_t l = 1; l < layout.size(); ++l) {
    const std::size_t in = layout[l - 1], out = layout[l];
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < in * out; ++i) m.values[off + i] = scale * u(rng);
    off += in * out + out;  // biases start at zero
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

/// Scratch buffers for one network; reuse across calls to avoid allocation.
class Network {
 public:
  explicit Network(const ModelLayout& layout) : layout_(layout) {
    if (layout.size() < 2) throw InvalidArgument("model layout needs at least input and output");
    acts_.resize(layout.size());
    deltas_.resize(layout.size());
    for (std::size_t l = 0; l < layout.size(); ++l) {
      acts_[l].resize(layout[l]);
      deltas_[l].resize(layout[l]);
    }
  }

  const ModelLayout& layout() const noexcept { return layout_; }

  /// Softmax probabilities of the output layer for one sample.
  std::span<const double> forward(std::span<const double> w, std::span<const double> x) {
    if (x.size() != layout_[0]) throw InvalidArgument("sample dimension does not match model input");
    std::copy(x.begin(), x.end(), acts_[0].begin());
    std::size_t off = 0;
    const std::size_t L = layout_.size() - 1;
    for (std::size_t l = 1; l <= L; ++l) {
      const std::size_t in = layout_[l - 1], out = layout_[l];
      const double* W = w.data() + off;
      const double* b = W + in * out;
      auto& a = acts_[l];
      const auto& prev = acts_[l - 1];
      for (std::size_t o = 0; o < out; ++o) {
        double z = b[o];
        const double* row = W + o * in;
        for (std::size_t i = 0; i < in; ++i) z += row[i] * prev[i];
        a[o] = z;
      }
      if (l < L) {
        for (auto& v : a) v = std::tanh(v);
      } else {
        const double mx = *std::max_element(a.begin(), a.end());
        double sum = 0.0;
        for (auto& v : a) sum += (v = std::exp(v - mx));
        for (auto& v : a) v /= sum;
      }
      off += in * out + out;
    }
    return acts_[L];
  }

  /// Cross-entropy of one sample; adds scale·∇ℓ into `grad` when non-empty.
  double loss_grad(std::span<const double> w, std::span<const double> x, int label,
                   std::span<double> grad, double scale = 1.0) {
    const auto p = forward(w, x);
    const std::size_t L = layout_.size() - 1;
    if (label < 0 || static_cast<std::size_t>(label) >= layout_[L])
      throw InvalidArgument("label outside the model's classes");
    const double loss = -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-300));
    if (grad.empty()) return loss;

    auto& d = deltas_[L];
    for (std::size_t o = 0; o < layout_[L]; ++o) d[o] = p[o];
    d[static_cast<std::size_t>(label)] -= 1.0;

    std::size_t off = w.size();
    for (std::size_t l = L; l >= 1; --l) {
      const std::size_t in = layout_[l - 1], out = layout_[l];
      off -= in * out + out;
      const double* W = w.data() + off;
      double* gW = grad.data() + off;
      double* gb = gW + in * out;
      const auto& prev = acts_[l - 1];
      const auto& dl = deltas_[l];
      for (std::size_t o = 0; o < out; ++o) {
        const double g = scale * dl[o];
        gb[o] += g;
        double* row = gW + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += g * prev[i];
      }
      if (l > 1) {
        auto& dp = deltas_[l - 1];
        std::fill(dp.begin(), dp.end(), 0.0);
        for (std::size_t o = 0; o < out; ++o) {
          const double* row = W + o * in;
          for (std::size_t i = 0; i < in; ++i) dp[i] += row[i] * dl[o];
        }
        for (std::size_t i = 0; i < in; ++i) dp[i] *= 1.0 - prev[i] * prev[i];  // tanh'
      }
    }
    return loss;
  }

 private:
  ModelLayout layout_;
  std::vector<std::vector<double>> acts_;
  std::vector<std::vector<double>> deltas_;
};

/// Mean cross-entropy over `indices`; writes the mean gradient into `grad` when non-null.
inline double batch_loss_grad(const ModelParams& m, const SampleSet& data,
                              std::span<const std::size_t> indices, std::vector<double>* grad,
                              Network* net = nullptr) {
  if (indices.empty()) throw InvalidArgument("empty batch");
  Network local(m.layout);
  Network& n = net ? *net : local;
  std::span<double> g;
  if (grad) {
    grad->assign(m.values.size(), 0.0);
    g = *grad;
  }
  const double scale = 1.0 / static_cast<double>(indices.size());
  double loss = 0.0;
  for (auto i : indices) loss += n.loss_grad(m.values, data.row(i), data.label(i), g, scale);
  return loss * scale;
}

inline double batch_loss_grad(const ModelParams& m, const SampleSet& data, std::vector<double>* grad) {
  IndexList all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return batch_loss_grad(m, data, all, grad);
}

// ---------------------------------------------------------------------------
// Local updates

/// One round of local SGD over a fixed index set, resumable so a pass can be split across
/// the satellites of a relay chain. Sample order is a seeded shuffle per (stream, round).
class SgdPass {
 public:
  SgdPass(const ModelParams& start, const SampleSet& data, IndexList indices, const TrainConfig& cfg,
          int round, std::size_t batch, std::uint64_t stream)
      : model_(start), anchor_(start.values), data_(&data), order_(std::move(indices)), cfg_(cfg),
        eta_(cfg.lr.at(round)), batch_(batch), net_(start.layout) {
    if (batch_ == 0) throw InvalidArgument("batch size must be positive");
    Rng rng(derive_seed(cfg.seed, {0x73676470ULL, stream, static_cast<std::uint64_t>(round)}));
    std::shuffle(order_.begin(), order_.end(), rng);
    if (cfg_.single_step) order_.resize(std::min(order_.size(), batch_));
    if (cfg_.momentum != 0.0 && !cfg_.single_step) velocity_.assign(model_.values.size(), 0.0);
  }

  std::size_t total() const noexcept { return order_.size(); }
  std::size_t processed() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ >= order_.size(); }
  const ModelParams& model() const noexcept { return model_; }
  ModelParams take() && { return std::move(model_); }

  /// Runs whole mini-batches while the cumulative sample count stays ≤ target; the final
  /// short batch runs only when the target reaches the end of the pass.
  void advance_to(std::size_t target) {
    target = std::min(target, order_.size());
    while (pos_ < target) {
      const std::size_t end = std::min(pos_ + batch_, order_.size());
      if (end > target) break;
      step(pos_, end);
      pos_ = end;
    }
  }
  void run() { advance_to(order_.size()); }

 private:
  void step(std::size_t begin, std::size_t end) {
    if (eta_ == 0.0) return;
    const std::span<const std::size_t> idx(order_.data() + begin, end - begin);
    batch_loss_grad(model_, *data_, idx, &grad_, &net_);
    if (cfg_.prox_mu > 0.0)
      for (std::size_t i = 0; i < grad_.size(); ++i) grad_[i] += cfg_.prox_mu * (model_.values[i] - anchor_[i]);
    for (double g : grad_)
      if (!std::isfinite(g))
        throw NumericalError("non-finite gradient at samples " + std::to_string(begin) + ".." +
                             std::to_string(end) + " (eta " + std::to_string(eta_) + ")");
    if (!velocity_.empty()) {
      for (std::size_t i = 0; i < grad_.size(); ++i) {
        velocity_[i] = cfg_.momentum * velocity_[i] + grad_[i];
        model_.values[i] -= eta_ * velocity_[i];
      }
    } else {
      for (std::size_t i = 0; i < grad_.size(); ++i) model_.values[i] -= eta_ * grad_[i];
    }
  }

  ModelParams model_;
  std::vector<double> anchor_;
  const SampleSet* data_;
  IndexList order_;
  TrainConfig cfg_;
  double eta_;
  std::size_t batch_;
  std::size_t pos_ = 0;
  std::vector<double> velocity_;
  std::vector<double> grad_;
  Network net_;
};

/// A full round of local training; an empty index set returns the model unchanged.
inline ModelParams local_update(const ModelParams& model, const SampleSet& data, const IndexList& indices,
                                const TrainConfig& cfg, int round, std::size_t batch, std::uint64_t stream) {
  if (indices.empty()) return model;
  SgdPass pass(model, data, indices, cfg, round, batch, stream);
  pass.run();
  return std::move(pass).take();
}

// ---------------------------------------------------------------------------
// Aggregation

/// [ (Σα_k|D_k|)·w_S + Σ(1−α_k)|D_k|·w_k ] / Σ|D_k|.
inline ModelParams intra_cluster_aggregate(const ModelParams& sat, const std::vector<ModelParams>& clients,
                                           const std::vector<double>& alpha,
                                           const std::vector<std::size_t>& sizes) {
  if (clients.empty() || clients.size() != alpha.size() || clients.size() != sizes.size())
    throw InvalidArgument("aggregation inputs have mismatched lengths");
  double total = 0.0, sat_w = 0.0;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    total += static_cast<double>(sizes[k]);
    sat_w += alpha[k] * static_cast<double>(sizes[k]);
  }
  if (!(total > 0.0)) throw InvalidArgument("cluster has no samples");
  ModelParams out = clients.front();
  const std::size_t n = out.values.size();
  for (const auto& c : clients)
    if (c.values.size() != n) throw InvalidArgument("client models differ in size");
  const double ws = sat_w / total;
  if (ws > 0.0 && sat.values.size() != n) throw InvalidArgument("satellite model differs in size");
  for (std::size_t i = 0; i < n; ++i) {
    double v = ws > 0.0 ? ws * sat.values[i] : 0.0;
    for (std::size_t k = 0; k < clients.size(); ++k)
      v += (1.0 - alpha[k]) * static_cast<double>(sizes[k]) / total * clients[k].values[i];
    out.values[i] = v;
  }
  return out;
}

/// Unweighted mean over clusters.
inline ModelParams global_aggregate(const std::vector<ModelParams>& clusters) {
  if (clusters.empty()) throw InvalidArgument("no cluster models to aggregate");
  ModelParams out = clusters.front();
  const double inv = 1.0 / static_cast<double>(clusters.size());
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    double v = 0.0;
    for (const auto& c : clusters) v += c.values.at(i);
    out.values[i] = v * inv;
  }
  return out;
}

/// Drives a cluster's satellite pass; lets the simulator split it across a relay chain.
using SatellitePassDriver = std::function<void(std::size_t cluster, SgdPass& pass)>;

/// One learning round: client passes over retained sets, satellite passes over the union of
/// each cluster's offloaded sets, weighted intra-cluster aggregation, then the global mean.
/// `alpha` must be the realized fractions (offloaded count / |D|). Reductions run in a fixed
/// order, so the result does not depend on `workers`.
inline ModelParams federated_round(const Scenario& s, const ModelParams& w, const std::vector<double>& alpha,
                                   const TrainConfig& cfg, int round, unsigned workers = 1,
                                   const SatellitePassDriver& driver = {}) {
  if (!s.has_data()) throw InvalidArgument("scenario carries no training data");
  const auto& data = *s.train;
  struct Task {
    std::size_t cluster;
    long client;  // -1: satellite pass
  };
  std::vector<Task> tasks;
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    for (auto k : s.members[j]) tasks.push_back({j, static_cast<long>(k)});
    tasks.push_back({j, -1});
  }
  std::vector<ModelParams> out(tasks.size());
  parallel_for(
      tasks.size(),
      [&](std::size_t t) {
        const auto& task = tasks[t];
        if (task.client >= 0) {
          const auto k = static_cast<std::size_t>(task.client);
          out[t] = local_update(w, data, s.data[k].retained, cfg, round, cfg.batch_client,
                                static_cast<std::uint64_t>(s.clients[k].id));
          return;
        }
        const auto idx = s.satellite_dataset(task.cluster);
        if (idx.empty()) {
          out[t] = w;
          return;
        }
        SgdPass pass(w, data, idx, cfg, round, cfg.batch_satellite,
                     0x5a7e11170000ULL + static_cast<std::uint64_t>(s.clusters[task.cluster].id));
        if (driver) driver(task.cluster, pass);
        pass.run();
        out[t] = std::move(pass).take();
      },
      workers);

  std::vector<ModelParams> cluster_models;
  std::size_t t = 0;
  for (std::size_t j = 0; j < s.clusters.size(); ++j) {
    std::vector<ModelParams> clients;
    std::vector<double> a;
    std::vector<std::size_t> sizes;
    for (auto k : s.members[j]) {
      clients.push_back(std::move(out[t++]));
      a.push_back(alpha[k]);
      sizes.push_back(s.clients[k].dataset_size);
    }
    cluster_models.push_back(intra_cluster_aggregate(out[t++], clients, a, sizes));
  }
  auto next = global_aggregate(cluster_models);
  if (!next.finite()) throw NumericalError("global model diverged in round " + std::to_string(round));
  return next;
}

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

inline EvalResult evaluate(const ModelParams& m, const SampleSet& test) {
  if (test.empty()) throw InvalidArgument("empty test set");
  Network net(m.layout);
  std::size_t hits = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto p = net.forward(m.values, test.row(i));
    const auto arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (arg == test.label(i)) ++hits;
    loss -= std::log(std::max(p[static_cast<std::size_t>(test.label(i))], 1e-300));
  }
  const double n = static_cast<double>(test.size());
  return {static_cast<double>(hits) / n, loss / n};
}

// ---------------------------------------------------------------------------
// Checkpoints: "OFCK", u32 version, u64 layer count, u64 widths..., u64 count, f64 values (LE)

namespace detail {
inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}
inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw FormatError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}
}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& out, const ModelParams& m) {
  out.write("OFCK", 4);
  const std::uint32_t ver = kCheckpointVersion;
  char vb[4];
  for (int i = 0; i < 4; ++i) vb[i] = static_cast<char>((ver >> (8 * i)) & 0xff);
  out.write(vb, 4);
  detail::put_u64(out, m.layout.size());
  for (auto w : m.layout) detail::put_u64(out, w);
  detail::put_u64(out, m.values.size());
  for (double v : m.values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    detail::put_u64(out, bits);
  }
}

inline ModelParams load_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "OFCK", 4) != 0) throw FormatError("not a model checkpoint");
  unsigned char vb[4];
  in.read(reinterpret_cast<char*>(vb), 4);
  if (!in) throw FormatError("truncated checkpoint");
  const std::uint32_t ver = vb[0] | (vb[1] << 8) | (vb[2] << 16) | (std::uint32_t{vb[3]} << 24);
  if (ver != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(ver));
  ModelParams m;
  const auto layers = detail::get_u64(in);
  if (layers < 2 || layers > 64) throw FormatError("bad checkpoint layout");
  for (std::uint64_t i = 0; i < layers; ++i) m.layout.push_back(detail::get_u64(in));
  const auto count = detail::get_u64(in);
  if (count != layout_param_count(m.layout)) throw FormatError("checkpoint size disagrees with its layout");
  m.values.resize(count);
  for (auto& v : m.values) {
    const auto bits = detail::get_u64(in);
    std::memcpy(&v, &bits, 8);
  }
  return m;
}

}  // namespace orbitfed
