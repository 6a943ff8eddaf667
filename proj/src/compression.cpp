#include "fslt/compression.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fslt {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'K', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : in_(bytes) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<std::uint8_t> raw(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining())
      throw FormatError("truncated ticket: need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                        ", " + std::to_string(remaining()) + " left");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw FormatError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

std::uint8_t checked_u8(std::size_t v, const char* what) {
  if (v > 0xFFu) throw FormatError(std::string(what) + " does not fit in 8 bits");
  return static_cast<std::uint8_t>(v);
}

std::size_t active_count(const Tensor& mask) {
  return static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](float v) { return v != 0.0f; }));
}

}  // namespace

PackedTicket make_packed(const TicketModel& model) {
  model.plan.validate();
  const auto mask = inference_mask(model);
  if (mask.size() != model.freeze.layers.size()) throw CountError("mask and freeze mask disagree on layer count");

  PackedTicket p;
  p.init = model.init;
  p.strategy = model.plan.strategy;
  p.seed = model.seed;
  p.slt_sparsity = model.target_sparsity;
  p.freeze_ratio = model.plan.freeze_ratio;
  p.prune_ratio = model.plan.prune_ratio;
  p.lock_ratio = model.plan.lock_ratio;
  p.arch = model.arch;
  p.norm = model.norm;

  std::vector<double> realized;
  for (std::size_t l = 0; l < mask.size(); ++l) {
    const auto& states = model.freeze.layers[l];
    const auto& lf = model.plan.layers[l];
    if (states.size() != mask[l].numel() || lf.size != mask[l].numel())
      throw CountError("layer " + std::to_string(l) + " size mismatch");
    LayerRecord rec;
    rec.layer_index = static_cast<std::uint32_t>(l);
    rec.shape = mask[l].shape;
    rec.pruned = lf.pruned;
    rec.locked = lf.locked;
    rec.realized_sparsity = 1.0 - static_cast<double>(active_count(mask[l])) / static_cast<double>(mask[l].numel());
    rec.bit_count = lf.free();
    rec.bits.assign((rec.bit_count + 7) / 8, 0);
    std::uint64_t bit = 0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const bool on = mask[l].data[i] != 0.0f;
      switch (states[i]) {
        case FreezeState::pruned:
          if (on) throw CountError("active PRUNED position in layer " + std::to_string(l));
          break;
        case FreezeState::locked:
          if (!on) throw CountError("inactive LOCKED position in layer " + std::to_string(l));
          break;
        case FreezeState::free:
          if (on) rec.bits[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
          ++bit;
          break;
      }
    }
    if (bit != rec.bit_count) throw CountError("freeze mask does not match plan counts in layer " + std::to_string(l));
    realized.push_back(rec.realized_sparsity);
    p.layers.push_back(std::move(rec));
  }
  if (model.init == InitKind::signed_kaiming_constant && model.scaling_sparsity != realized)
    throw std::invalid_argument("SKC weights must be rescaled with finalize_scaling() before packing");
  return p;
}

std::vector<std::uint8_t> encode(const PackedTicket& p) {
  Writer w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  w.u16(p.format_version);
  w.u16(p.rng_scheme_version);
  w.u8(static_cast<std::uint8_t>(p.codec));
  w.u8(static_cast<std::uint8_t>(p.init));
  w.u8(static_cast<std::uint8_t>(p.strategy));
  w.u8(0);
  w.u64(p.seed);
  w.f64(p.slt_sparsity);
  w.f64(p.freeze_ratio);
  w.f64(p.prune_ratio);
  w.f64(p.lock_ratio);

  w.u16(static_cast<std::uint16_t>(std::min<std::size_t>(p.arch.name.size(), 0xFFFF)));
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>(p.arch.name.data()), std::min<std::size_t>(p.arch.name.size(), 0xFFFF)));
  w.u8(checked_u8(p.arch.input_shape.size(), "input rank"));
  for (auto d : p.arch.input_shape) w.u32(checked_u32(d, "input extent"));
  w.u32(checked_u32(p.arch.num_classes, "class count"));
  w.u32(checked_u32(p.arch.layers.size(), "layer count"));
  for (const auto& s : p.arch.layers) {
    w.u8(static_cast<std::uint8_t>(s.kind));
    w.u32(checked_u32(s.in_features, "in_features"));
    w.u32(checked_u32(s.out_features, "out_features"));
    w.u8(checked_u8(s.kernel_h, "kernel_h"));
    w.u8(checked_u8(s.kernel_w, "kernel_w"));
  }

  w.f32(p.norm.momentum);
  w.f32(p.norm.eps);
  w.u32(checked_u32(p.norm.layers.size(), "batchnorm count"));
  for (const auto& bn : p.norm.layers) {
    if (bn.mean.size() != bn.var.size()) throw FormatError("batchnorm mean/var length mismatch");
    w.u32(checked_u32(bn.mean.size(), "batchnorm channels"));
    for (float v : bn.mean) w.f32(v);
    for (float v : bn.var) w.f32(v);
  }

  w.u32(checked_u32(p.layers.size(), "record count"));
  for (const auto& r : p.layers) {
    w.u32(r.layer_index);
    w.u8(checked_u8(r.shape.size(), "weight rank"));
    for (auto d : r.shape) w.u32(checked_u32(d, "weight extent"));
    w.u64(r.pruned);
    w.u64(r.locked);
    w.f64(r.realized_sparsity);
    w.u64(r.bit_count);
    if (r.bits.size() != (r.bit_count + 7) / 8) throw FormatError("bitmap length does not match bit count");
    w.raw(r.bits);
  }
  w.u32(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

PackedTicket decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("ticket too short: " + std::to_string(bytes.size()) + " bytes");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.subspan(bytes.size() - 4));
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual) throw ChecksumError("checksum mismatch: stored " + std::to_string(stored) + ", computed " + std::to_string(actual));

  Reader r(body);
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic at offset 0");
  PackedTicket p;
  p.format_version = r.u16();
  if (p.format_version != kFormatVersion)
    throw VersionError("format version " + std::to_string(p.format_version) + " (this build reads " +
                       std::to_string(kFormatVersion) + ")");
  p.rng_scheme_version = r.u16();
  if (p.rng_scheme_version != kRngSchemeVersion)
    throw VersionError("RNG scheme version " + std::to_string(p.rng_scheme_version) + " (this build generates " +
                       std::to_string(kRngSchemeVersion) + "); weights cannot be regenerated");
  const auto codec = r.u8();
  if (codec != static_cast<std::uint8_t>(Codec::raw)) throw VersionError("unknown codec id " + std::to_string(codec));
  const auto init = r.u8();
  if (init > 2) throw FormatError("unknown init kind " + std::to_string(init) + " at offset " + std::to_string(r.pos() - 1));
  p.init = static_cast<InitKind>(init);
  const auto strategy = r.u8();
  if (strategy > 1) throw FormatError("unknown strategy " + std::to_string(strategy) + " at offset " + std::to_string(r.pos() - 1));
  p.strategy = static_cast<Strategy>(strategy);
  r.u8();
  p.seed = r.u64();
  p.slt_sparsity = r.f64();
  p.freeze_ratio = r.f64();
  p.prune_ratio = r.f64();
  p.lock_ratio = r.f64();

  const auto name = r.raw(r.u16());
  p.arch.name.assign(name.begin(), name.end());
  const auto rank = r.u8();
  for (int i = 0; i < rank; ++i) p.arch.input_shape.push_back(r.u32());
  p.arch.num_classes = r.u32();
  const auto layer_count = r.u32();
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec s;
    const auto kind = r.u8();
    if (kind > 5) throw FormatError("unknown layer kind " + std::to_string(kind) + " at offset " + std::to_string(r.pos() - 1));
    s.kind = static_cast<LayerKind>(kind);
    s.in_features = r.u32();
    s.out_features = r.u32();
    s.kernel_h = r.u8();
    s.kernel_w = r.u8();
    p.arch.layers.push_back(s);
  }
  try {
    p.arch.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("stored architecture is invalid: ") + e.what());
  }

  p.norm.momentum = r.f32();
  p.norm.eps = r.f32();
  const auto bn_count = r.u32();
  for (std::uint32_t i = 0; i < bn_count; ++i) {
    BatchNormStats bn;
    const auto c = r.u32();
    if (static_cast<std::uint64_t>(c) * 8 > r.remaining()) throw FormatError("batchnorm record overruns the file at offset " + std::to_string(r.pos()));
    for (std::uint32_t j = 0; j < c; ++j) bn.mean.push_back(r.f32());
    for (std::uint32_t j = 0; j < c; ++j) bn.var.push_back(r.f32());
    p.norm.layers.push_back(std::move(bn));
  }

  const auto records = r.u32();
  for (std::uint32_t i = 0; i < records; ++i) {
    LayerRecord rec;
    rec.layer_index = r.u32();
    const auto wr = r.u8();
    for (int j = 0; j < wr; ++j) rec.shape.push_back(r.u32());
    rec.pruned = r.u64();
    rec.locked = r.u64();
    rec.realized_sparsity = r.f64();
    rec.bit_count = r.u64();
    if (rec.bit_count / 8 > r.remaining()) throw FormatError("bitmap overruns the file at offset " + std::to_string(r.pos()));
    rec.bits = r.raw((rec.bit_count + 7) / 8);
    p.layers.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError(std::to_string(r.remaining()) + " trailing bytes at offset " + std::to_string(r.pos()));
  return p;
}

TicketModel restore(const PackedTicket& p) {
  if (p.format_version != kFormatVersion) throw VersionError("format version " + std::to_string(p.format_version));
  if (p.rng_scheme_version != kRngSchemeVersion) throw VersionError("RNG scheme version " + std::to_string(p.rng_scheme_version));

  const auto params = p.arch.param_layers();
  if (p.layers.size() != params.size())
    throw CountError(std::to_string(p.layers.size()) + " layer records for " + std::to_string(params.size()) + " parameterized layers");
  const auto expected_norm = NormState::init(p.arch);
  if (p.norm.layers.size() != expected_norm.layers.size()) throw CountError("batchnorm record count mismatch");
  for (std::size_t i = 0; i < p.norm.layers.size(); ++i)
    if (p.norm.layers[i].mean.size() != expected_norm.layers[i].mean.size()) throw CountError("batchnorm channel count mismatch");

  FreezePlan plan;
  plan.freeze_ratio = p.freeze_ratio;
  plan.prune_ratio = p.prune_ratio;
  plan.lock_ratio = p.lock_ratio;
  plan.strategy = p.strategy;
  std::vector<double> realized;
  for (std::size_t l = 0; l < params.size(); ++l) {
    const auto& rec = p.layers[l];
    const auto& spec = p.arch.layers[params[l]];
    const std::string where = "layer record " + std::to_string(l);
    if (rec.layer_index != l) throw CountError(where + ": stored index " + std::to_string(rec.layer_index));
    if (rec.shape != spec.weight_shape()) throw CountError(where + ": shape " + shape_str(rec.shape) + " != " + shape_str(spec.weight_shape()));
    const std::size_t n = spec.param_count();
    if (rec.pruned + rec.locked > n) throw CountError(where + ": pruned + locked exceeds layer size");
    if (rec.bit_count != n - rec.pruned - rec.locked) throw CountError(where + ": bit count != FREE count");
    std::uint64_t ones = 0;
    for (auto b : rec.bits) ones += static_cast<std::uint64_t>(std::popcount(b));
    if (rec.bit_count % 8 != 0 && (rec.bits.back() >> (rec.bit_count % 8)) != 0) throw CountError(where + ": nonzero padding bits");
    const auto active = static_cast<std::uint64_t>(std::llround((1.0 - rec.realized_sparsity) * static_cast<double>(n)));
    if (ones + rec.locked != active) throw CountError(where + ": popcount disagrees with the stored sparsity");
    plan.layers.push_back({n, static_cast<std::size_t>(rec.pruned), static_cast<std::size_t>(rec.locked)});
    realized.push_back(rec.realized_sparsity);
  }
  try {
    plan.validate();
  } catch (const PlanError& e) {
    throw CountError(e.what());
  }

  TicketModel m;
  m.arch = p.arch;
  m.seed = p.seed;
  m.init = p.init;
  m.target_sparsity = p.slt_sparsity;
  m.plan = plan;
  m.freeze = materialize_mask(plan, p.seed);
  m.scaling_sparsity = realized;
  m.weights = regenerate_weights(p.arch, p.init, realized, p.seed);
  m.norm = p.norm;
  std::size_t total_active = 0;
  for (std::size_t l = 0; l < params.size(); ++l) {
    const auto& rec = p.layers[l];
    Tensor mask(rec.shape, 0.0f);
    std::uint64_t bit = 0;
    const auto& states = m.freeze.layers[l];
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i] == FreezeState::locked) {
        mask.data[i] = 1.0f;
      } else if (states[i] == FreezeState::free) {
        if ((rec.bits[bit / 8] >> (bit % 8)) & 1u) mask.data[i] = 1.0f;
        ++bit;
      }
    }
    total_active += active_count(mask);
    m.supermask.push_back(std::move(mask));
  }
  if (total_active != m.required_active())
    throw CountError("active count " + std::to_string(total_active) + " != round((1-k)N) = " + std::to_string(m.required_active()));
  return m;
}

std::vector<std::uint8_t> pack(const TicketModel& model) { return encode(make_packed(model)); }

TicketModel unpack(std::span<const std::uint8_t> bytes) { return restore(decode(bytes)); }

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to " + path.string() + " failed");
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SizeReport account_size(const FreezePlan& plan, std::size_t norm_statistics) {
  return {plan.total_free(), 32ull * norm_statistics};
}

SizeReport account_size(const TicketModel& model) { return account_size(model.plan, model.norm.statistic_count()); }

SizeReport weight_training_size(std::size_t params, std::size_t norm_statistics) {
  return {32ull * params, 32ull * norm_statistics};
}

}  // namespace fslt
