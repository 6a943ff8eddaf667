#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "fslt/harness.hpp"
#include "fslt/rng.hpp"

namespace fslt {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > b.size())
    throw DatasetError(path.string() + ": truncated header at byte " + std::to_string(offset));
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) | (std::uint32_t{b[offset + 2]} << 8) |
         b[offset + 3];
}

// Toy cluster means and samples come from streams outside the range used by model layers.
constexpr std::uint64_t kToyMeans = std::uint64_t{1} << 40;
constexpr std::uint64_t kToySamples = (std::uint64_t{1} << 40) + 1;

void normalize(Dataset& ds) {
  const auto& shape = ds.input_shape;
  const std::size_t channels = shape.size() == 3 ? shape[0] : shape_numel(shape);
  const std::size_t inner = shape_numel(shape) / channels;
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  const std::size_t row = shape_numel(shape);
  const std::size_t n = ds.train.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t j = 0; j < inner; ++j) {
        const double v = ds.train.inputs.data[i * row + c * inner + j];
        sum[c] += v;
        sq[c] += v * v;
      }
  ds.channel_mean.assign(channels, 0.0f);
  ds.channel_std.assign(channels, 1.0f);
  const double count = static_cast<double>(n * inner);
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - mean * mean);
    ds.channel_mean[c] = static_cast<float>(mean);
    ds.channel_std[c] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
  for (LabeledSet* set : {&ds.train, &ds.val, &ds.test}) {
    for (std::size_t i = 0; i < set->size(); ++i)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t j = 0; j < inner; ++j) {
          float& v = set->inputs.data[i * row + c * inner + j];
          v = (v - ds.channel_mean[c]) / ds.channel_std[c];
        }
  }
}

LabeledSet head(const LabeledSet& set, std::size_t limit) {
  if (limit == 0 || limit >= set.size()) return set;
  return set.slice(0, limit);
}

}  // namespace

LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = slurp(images);
  const auto lb = slurp(labels);
  if (be32(ib, 0, images) != 0x00000803u)
    throw DatasetError(images.string() + ": bad magic at byte 0 (expected 0x00000803)");
  if (be32(lb, 0, labels) != 0x00000801u)
    throw DatasetError(labels.string() + ": bad magic at byte 0 (expected 0x00000801)");
  const std::size_t n = be32(ib, 4, images), rows = be32(ib, 8, images), cols = be32(ib, 12, images);
  const std::size_t nl = be32(lb, 4, labels);
  if (n != nl) throw DatasetError(images.string() + ": " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
  if (n == 0 || rows == 0 || cols == 0) throw DatasetError(images.string() + ": empty image set");
  const std::size_t need = 16 + n * rows * cols;
  if (ib.size() < need)
    throw DatasetError(images.string() + ": truncated at byte " + std::to_string(ib.size()) + ", expected " + std::to_string(need));
  if (lb.size() < 8 + n)
    throw DatasetError(labels.string() + ": truncated at byte " + std::to_string(lb.size()) + ", expected " + std::to_string(8 + n));
  LabeledSet set;
  set.inputs = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) set.inputs.data[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  set.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = lb[8 + i];
    if (label > 9) throw DatasetError(labels.string() + ": label " + std::to_string(label) + " at byte " + std::to_string(8 + i));
    set.labels[i] = label;
  }
  return set;
}

LabeledSet load_cifar_batches(const std::vector<std::filesystem::path>& files) {
  constexpr std::size_t kRecord = 1 + 3072;
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& path : files) {
    const auto b = slurp(path);
    if (b.empty() || b.size() % kRecord != 0)
      throw DatasetError(path.string() + ": size " + std::to_string(b.size()) + " is not a multiple of " +
                         std::to_string(kRecord) + " (partial record at byte " + std::to_string(b.size() / kRecord * kRecord) + ")");
    for (std::size_t off = 0; off < b.size(); off += kRecord) {
      if (b[off] >= 10) throw DatasetError(path.string() + ": label " + std::to_string(b[off]) + " at byte " + std::to_string(off));
      labels.push_back(b[off]);
      for (std::size_t j = 1; j < kRecord; ++j) pixels.push_back(static_cast<float>(b[off + j]) / 255.0f);
    }
  }
  if (labels.empty()) throw DatasetError("no CIFAR-10 batch files given");
  LabeledSet set;
  set.inputs = Tensor({labels.size(), 3, 32, 32}, std::move(pixels));
  set.labels = std::move(labels);
  return set;
}

LabeledSet make_toy_gaussians(std::size_t samples, std::size_t features, std::size_t classes, std::uint64_t seed,
                              std::uint64_t stream) {
  if (samples == 0 || features == 0 || classes < 2) throw std::invalid_argument("toy_gaussians needs samples, features and >= 2 classes");
  const Stream means_rng(StreamKey{seed, kToyMeans, Purpose::data_split});
  std::vector<double> means(classes * features);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    for (std::size_t f = 0; f < features; ++f) {
      means[c * features + f] = means_rng.normal(c * features + f);
      norm += means[c * features + f] * means[c * features + f];
    }
    norm = std::sqrt(norm);
    for (std::size_t f = 0; f < features; ++f) means[c * features + f] *= 2.0 / norm;
  }
  const Stream rng(StreamKey{seed, kToySamples + stream, Purpose::data_split});
  LabeledSet set;
  set.inputs = Tensor({samples, features});
  set.labels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t c = i % classes;
    set.labels[i] = static_cast<int>(c);
    for (std::size_t f = 0; f < features; ++f)
      set.inputs.data[i * features + f] = static_cast<float>(means[c * features + f] + rng.normal(i * features + f));
  }
  return set;
}

std::filesystem::path default_data_root() {
  if (const char* env = std::getenv("FSLT_DATA_ROOT"); env && *env) return env;
  return "data";
}

Dataset load_dataset(const std::string& name, const std::filesystem::path& root, std::uint64_t seed,
                     const DatasetOptions& options) {
  Dataset ds;
  ds.name = name;
  LabeledSet full, test;
  if (name == "mnist") {
    const auto dir = root / "mnist";
    full = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    ds.num_classes = 10;
  } else if (name == "cifar10") {
    const auto dir = root / "cifar10";
    std::vector<std::filesystem::path> train_files;
    for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    full = load_cifar_batches(train_files);
    test = load_cifar_batches({dir / "test_batch.bin"});
    ds.num_classes = 10;
  } else if (name == "toy_gaussians") {
    full = make_toy_gaussians(2000, 16, 4, seed, 0);
    test = make_toy_gaussians(500, 16, 4, seed, 1);
    ds.num_classes = 4;
  } else {
    throw DatasetError("unknown dataset '" + name + "' (expected mnist, cifar10 or toy_gaussians)");
  }
  full = head(full, options.max_train);
  test = head(test, options.max_test);
  if (full.size() < 5) throw DatasetError("training file has fewer than 5 samples");
  ds.input_shape = Shape(full.inputs.shape.begin() + 1, full.inputs.shape.end());

  const std::size_t n = full.size();
  const std::size_t n_train = n * 4 / 5;
  const auto perm = partial_permutation(n, n, StreamKey{seed, 0, Purpose::data_split});
  ds.train = full.gather(std::span(perm).first(n_train));
  ds.val = full.gather(std::span(perm).subspan(n_train));
  ds.test = std::move(test);
  normalize(ds);
  return ds;
}

}  // namespace fslt
