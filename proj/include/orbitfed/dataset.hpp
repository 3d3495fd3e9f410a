#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "orbitfed/error.hpp"
#include "orbitfed/rng.hpp"

namespace orbitfed {

/// Dense labeled corpus; features stored row-major.
class SampleSet {
 public:
  SampleSet() = default;
  SampleSet(std::size_t dim, std::vector<double> features, std::vector<int> labels)
      : dim_(dim), features_(std::move(features)), labels_(std::move(labels)) {
    if (dim_ == 0) throw InvalidArgument("sample dimension must be positive");
    if (features_.size() != dim_ * labels_.size())
      throw InvalidArgument("feature buffer does not match label count");
  }

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * dim_, dim_};
  }
  int label(std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  int num_classes() const {
    if (labels_.empty()) return 0;
    return *std::max_element(labels_.begin(), labels_.end()) + 1;
  }

  SampleSet subset(std::span<const std::size_t> indices) const {
    std::vector<double> f;
    std::vector<int> l;
    f.reserve(indices.size() * dim_);
    l.reserve(indices.size());
    for (auto i : indices) {
      auto r = row(i);
      f.insert(f.end(), r.begin(), r.end());
      l.push_back(labels_[i]);
    }
    return SampleSet(dim_, std::move(f), std::move(l));
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> features_;
  std::vector<int> labels_;
};

using IndexList = std::vector<std::size_t>;

// ---------------------------------------------------------------------------
// Synthetic Gaussian mixture

struct GaussianMixtureSpec {
  int classes = 10;
  std::size_t dim = 20;
  std::size_t samples = 60000;
  double mean_scale = 1.0;   ///< class means drawn N(0, mean_scale^2) per coordinate
  double noise_sigma = 1.0;  ///< isotropic per-sample noise
  std::uint64_t seed = 1;
  std::vector<std::vector<double>> means;  ///< optional explicit class means (classes x dim)
};

/// Class means for a mixture spec (explicit ones if given, otherwise drawn from the seed).
inline std::vector<std::vector<double>> mixture_means(const GaussianMixtureSpec& spec) {
  if (!spec.means.empty()) {
    if (spec.means.size() != static_cast<std::size_t>(spec.classes))
      throw InvalidArgument("explicit class means must have one row per class");
    for (const auto& m : spec.means)
      if (m.size() != spec.dim) throw InvalidArgument("class mean has wrong dimension");
    return spec.means;
  }
  Rng rng(derive_seed(spec.seed, {0x6d65616eULL}));
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.dim));
  for (auto& m : means)
    for (auto& v : m) v = spec.mean_scale * n01(rng);
  return means;
}

/// Balanced draw: sample i gets label i % classes, then the order is shuffled.
/// `stream` separates train/test draws that share one set of class means.
inline SampleSet generate_gaussian_mixture(const GaussianMixtureSpec& spec,
                                           std::uint64_t stream = 0) {
  if (spec.classes < 1 || spec.dim == 0 || spec.samples == 0)
    throw InvalidArgument("gaussian mixture needs classes, dim and samples > 0");
  if (!(spec.noise_sigma >= 0.0)) throw InvalidArgument("noise sigma must be non-negative");
  const auto means = mixture_means(spec);
  Rng rng(derive_seed(spec.seed, {0x73616d70ULL, stream}));
  std::normal_distribution<double> n01(0.0, 1.0);

  std::vector<int> labels(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) labels[i] = static_cast<int>(i % spec.classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<double> features(spec.samples * spec.dim);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const auto& mu = means[labels[i]];
    for (std::size_t d = 0; d < spec.dim; ++d)
      features[i * spec.dim + d] = mu[d] + spec.noise_sigma * n01(rng);
  }
  return SampleSet(spec.dim, std::move(features), std::move(labels));
}

// ---------------------------------------------------------------------------
// IDX and CSV readers

namespace detail {
inline std::uint32_t read_be32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw FormatError("truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}
}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label file pair; pixel values are scaled to [0, 1].
inline SampleSet load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("cannot open IDX images: " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("cannot open IDX labels: " + labels_path);

  if (detail::read_be32(img) != kIdxImageMagic)
    throw FormatError("bad IDX image magic in " + images_path);
  const std::uint32_t n = detail::read_be32(img);
  const std::uint32_t rows = detail::read_be32(img);
  const std::uint32_t cols = detail::read_be32(img);
  if (detail::read_be32(lab) != kIdxLabelMagic)
    throw FormatError("bad IDX label magic in " + labels_path);
  const std::uint32_t nl = detail::read_be32(lab);
  if (nl != n) throw FormatError("IDX image and label counts differ");

  const std::size_t dim = std::size_t{rows} * cols;
  if (dim == 0) throw FormatError("IDX images have zero size");
  std::vector<unsigned char> pix(dim * n);
  img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
  if (!img) throw FormatError("truncated IDX image data");
  std::vector<unsigned char> raw_labels(n);
  lab.read(reinterpret_cast<char*>(raw_labels.data()), n);
  if (!lab) throw FormatError("truncated IDX label data");

  std::vector<double> features(pix.size());
  std::transform(pix.begin(), pix.end(), features.begin(),
                 [](unsigned char p) { return p / 255.0; });
  std::vector<int> labels(raw_labels.begin(), raw_labels.end());
  return SampleSet(dim, std::move(features), std::move(labels));
}

/// CSV rows `label,f1,...,fn`; blank lines and lines starting with '#' are skipped.
inline SampleSet load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open CSV dataset: " + path);
  std::vector<double> features;
  std::vector<int> labels;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    int label = 0;
    bool first = true;
    while (std::getline(ss, cell, ',')) {
      try {
        if (first) {
          label = std::stoi(cell);
          first = false;
        } else {
          row.push_back(std::stod(cell));
        }
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (row.empty()) throw FormatError(path + ":" + std::to_string(line_no) + ": no features");
    if (dim == 0) dim = row.size();
    if (row.size() != dim)
      throw FormatError(path + ":" + std::to_string(line_no) + ": inconsistent feature count");
    if (label < 0) throw FormatError(path + ":" + std::to_string(line_no) + ": negative label");
    features.insert(features.end(), row.begin(), row.end());
    labels.push_back(label);
  }
  if (labels.empty()) throw FormatError("CSV dataset is empty: " + path);
  return SampleSet(dim, std::move(features), std::move(labels));
}

// ---------------------------------------------------------------------------
// Partitioning

enum class PartitionMode { iid, shard_noniid };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::iid;
  std::size_t shards_per_client = 2;
  std::size_t total_shards = 0;  ///< 0: clients * shards_per_client
  std::size_t samples_per_client = 0;  ///< 0: use everything (remainder dropped)
};

/// Splits a corpus among `clients`. IID deals a random permutation; shard mode sorts by label,
/// cuts equal shards and hands each client `shards_per_client` distinct random shards.
inline std::vector<IndexList> partition_dataset(const SampleSet& samples, std::size_t clients,
                                                const PartitionSpec& spec, std::uint64_t seed) {
  if (clients == 0) throw InvalidArgument("partition needs at least one client");
  Rng rng(derive_seed(seed, {0x70617274ULL}));
  const std::size_t n = samples.size();
  std::vector<IndexList> out(clients);

  if (spec.mode == PartitionMode::iid) {
    std::size_t per = spec.samples_per_client ? spec.samples_per_client : n / clients;
    if (per == 0 || per * clients > n)
      throw InvalidArgument("too few samples for the requested partition");
    IndexList perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t c = 0; c < clients; ++c)
      out[c].assign(perm.begin() + c * per, perm.begin() + (c + 1) * per);
    return out;
  }

  const std::size_t per_client = spec.shards_per_client;
  if (per_client == 0) throw InvalidArgument("shards_per_client must be positive");
  const std::size_t total = spec.total_shards ? spec.total_shards : clients * per_client;
  if (per_client * clients > total)
    throw InvalidArgument("shards_per_client * clients exceeds total shards");
  std::size_t shard_size = n / total;
  if (spec.samples_per_client) {
    if (spec.samples_per_client % per_client != 0)
      throw InvalidArgument("samples_per_client must be divisible by shards_per_client");
    shard_size = std::min(shard_size, spec.samples_per_client / per_client);
  }
  if (shard_size == 0) throw InvalidArgument("too few samples for the requested shards");

  IndexList order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples.label(a) < samples.label(b);
  });
  // Shards are contiguous label-sorted blocks of the full corpus.
  const std::size_t stride = n / total;
  IndexList shard_ids(total);
  std::iota(shard_ids.begin(), shard_ids.end(), std::size_t{0});
  std::shuffle(shard_ids.begin(), shard_ids.end(), rng);
  for (std::size_t c = 0; c < clients; ++c) {
    for (std::size_t s = 0; s < per_client; ++s) {
      const std::size_t shard = shard_ids[c * per_client + s];
      const auto begin = order.begin() + shard * stride;
      out[c].insert(out[c].end(), begin, begin + shard_size);
    }
  }
  return out;
}

}  // namespace orbitfed
