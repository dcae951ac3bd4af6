#pragma once

// The five classifier architectures over the tape engine, plus the
// parameter checkpoint format.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "alc/autodiff.hpp"
#include "alc/errors.hpp"
#include "alc/preprocess.hpp"

namespace alc::zoo {

using nn::Mode;
using nn::Parameter;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

enum class ModelKind : std::uint8_t { MLP, CNN, CNN_LSTM, RESNET1D, RESNET18 };
inline constexpr std::array<ModelKind, 5> kAllKinds = {ModelKind::MLP, ModelKind::CNN, ModelKind::CNN_LSTM,
                                                       ModelKind::RESNET1D, ModelKind::RESNET18};

inline const char* to_tag(ModelKind k) {
  switch (k) {
    case ModelKind::MLP: return "mlp";
    case ModelKind::CNN: return "cnn";
    case ModelKind::CNN_LSTM: return "cnn_lstm";
    case ModelKind::RESNET1D: return "resnet1d";
    case ModelKind::RESNET18: return "resnet18";
  }
  return "?";
}

inline ModelKind parse_kind(std::string_view tag) {
  for (ModelKind k : kAllKinds) {
    if (tag == to_tag(k)) return k;
  }
  throw ParamError("unknown model kind '" + std::string(tag) + "'");
}

struct ModelSpec {
  ModelKind kind = ModelKind::MLP;
  std::size_t in_channels = 3;
  std::size_t window_length = 200;
  std::size_t n_classes = 3;
};

/// Layer sizes for every architecture.
namespace table {

struct ConvSpec {
  std::size_t out_channels;
  std::size_t kernel;
  std::size_t stride;
};

inline constexpr std::array<std::size_t, 2> kMlpHidden = {256, 128};
inline constexpr std::array<ConvSpec, 3> kCnnConvs = {{{64, 7, 2}, {64, 5, 1}, {128, 3, 1}}};
inline constexpr std::array<ConvSpec, 2> kCnnLstmConvs = {{{64, 7, 2}, {64, 5, 2}}};
inline constexpr std::size_t kLstmHidden = 128;
inline constexpr ConvSpec kResStem = {64, 7, 2};
inline constexpr std::size_t kBlockKernel = 3;  // padded by 1, length-preserving at stride 1
inline constexpr std::size_t kPoolKernel = 3;   // resnet18 stem max-pool
inline constexpr std::size_t kPoolStride = 2;
/// (width, stride) of each basic block.
inline constexpr std::array<std::pair<std::size_t, std::size_t>, 2> kResNet1dBlocks = {{{64, 1}, {128, 2}}};
inline constexpr std::array<std::size_t, 4> kResNet18Widths = {64, 128, 256, 512};
inline constexpr std::size_t kResNet18BlocksPerStage = 2;
inline constexpr double kForgetBias = 1.0;

}  // namespace table

namespace detail {

inline Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.values) v = dist(rng);
  return t;
}

inline std::size_t conv_out(std::size_t len, std::size_t k, std::size_t stride, std::size_t pad, const char* where) {
  if (len + 2 * pad < k) {
    throw SpecError(std::string("window too short: ") + where + " sees length " + std::to_string(len) +
                    " with kernel " + std::to_string(k));
  }
  return (len + 2 * pad - k) / stride + 1;
}

}  // namespace detail

/// Named parameter and buffer enumeration shared by every layer.
struct Visitor {
  std::function<void(const std::string&, Parameter&)> param;
  std::function<void(const std::string&, Tensor&)> buffer;
};

struct DenseLayer {
  Parameter w, b;
  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : w("w", detail::glorot({in, out}, in, out, rng)), b("b", Tensor({out})) {}
  Var operator()(Var x) { return nn::dense(x, x.tape->param(w), x.tape->param(b)); }
  void visit(const std::string& p, Visitor& v) {
    v.param(p + ".w", w);
    v.param(p + ".b", b);
  }
};

struct ConvLayer {
  Parameter k, b;
  std::size_t stride = 1, padding = 0;
  ConvLayer() = default;
  ConvLayer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t s, std::size_t pad,
            std::mt19937_64& rng)
      : k("k", detail::glorot({out, in, kernel}, in * kernel, out * kernel, rng)), b("b", Tensor({out})),
        stride(s), padding(pad) {}
  Var operator()(Var x) { return nn::conv1d(x, x.tape->param(k), x.tape->param(b), stride, padding); }
  void visit(const std::string& p, Visitor& v) {
    v.param(p + ".k", k);
    v.param(p + ".b", b);
  }
};

struct BatchNormLayer {
  Parameter gamma, beta;
  nn::BatchNormStats stats;
  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t ch) : gamma("gamma", Tensor({ch}, 1.0)), beta("beta", Tensor({ch})), stats(ch) {}
  Var operator()(Var x, Mode mode) {
    return nn::batch_norm(x, x.tape->param(gamma), x.tape->param(beta), stats, mode);
  }
  void visit(const std::string& p, Visitor& v) {
    v.param(p + ".gamma", gamma);
    v.param(p + ".beta", beta);
    v.buffer(p + ".running_mean", stats.running_mean);
    v.buffer(p + ".running_var", stats.running_var);
  }
};

struct LstmLayer {
  Parameter w_ih, w_hh, b;
  LstmLayer() = default;
  LstmLayer(std::size_t in, std::size_t hidden, std::mt19937_64& rng)
      : w_ih("w_ih", detail::glorot({in, 4 * hidden}, in, 4 * hidden, rng)),
        w_hh("w_hh", detail::glorot({hidden, 4 * hidden}, hidden, 4 * hidden, rng)), b("b", Tensor({4 * hidden})) {
    for (std::size_t h = 0; h < hidden; ++h) b.value[hidden + h] = table::kForgetBias;
  }
  Var operator()(Var x) { return nn::lstm(x, x.tape->param(w_ih), x.tape->param(w_hh), x.tape->param(b)); }
  void visit(const std::string& p, Visitor& v) {
    v.param(p + ".w_ih", w_ih);
    v.param(p + ".w_hh", w_hh);
    v.param(p + ".b", b);
  }
};

/// conv-BN-ReLU-conv-BN plus a skip (identity, or 1x1 conv + BN when the
/// width or stride changes), followed by ReLU.
struct BasicBlock {
  ConvLayer conv1, conv2;
  BatchNormLayer bn1, bn2;
  std::optional<ConvLayer> proj;
  std::optional<BatchNormLayer> proj_bn;

  BasicBlock() = default;
  BasicBlock(std::size_t in, std::size_t out, std::size_t stride, std::mt19937_64& rng)
      : conv1(in, out, table::kBlockKernel, stride, 1, rng),
        conv2(out, out, table::kBlockKernel, 1, 1, rng),
        bn1(out),
        bn2(out) {
    if (stride != 1 || in != out) {
      proj.emplace(in, out, 1, stride, 0, rng);
      proj_bn.emplace(out);
    }
  }

  static std::size_t out_length(std::size_t len, std::size_t stride) {
    return detail::conv_out(len, table::kBlockKernel, stride, 1, "residual block");
  }

  Var operator()(Var x, Mode mode) {
    Var h = nn::relu(bn1(conv1(x), mode));
    h = bn2(conv2(h), mode);
    Var skip = proj ? (*proj_bn)((*proj)(x), mode) : x;
    return nn::relu(nn::add(h, skip));
  }
  void visit(const std::string& p, Visitor& v) {
    conv1.visit(p + ".conv1", v);
    bn1.visit(p + ".bn1", v);
    conv2.visit(p + ".conv2", v);
    bn2.visit(p + ".bn2", v);
    if (proj) {
      proj->visit(p + ".proj", v);
      proj_bn->visit(p + ".proj_bn", v);
    }
  }
};

class Network {
 public:
  virtual ~Network() = default;
  virtual Var forward(Var x, Mode mode) = 0;
  virtual void visit(Visitor& v) = 0;
};

namespace arch {

class Mlp final : public Network {
 public:
  Mlp(const ModelSpec& s, std::mt19937_64& rng) {
    std::size_t in = s.in_channels * s.window_length;
    for (std::size_t h : table::kMlpHidden) {
      layers_.emplace_back(in, h, rng);
      in = h;
    }
    layers_.emplace_back(in, s.n_classes, rng);
  }
  Var forward(Var x, Mode) override {
    const auto& sh = x.shape();
    Var h = nn::reshape(x, {sh[0], sh[1] * sh[2]});
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      if (i + 1 < layers_.size()) h = nn::relu(h);
    }
    return h;
  }
  void visit(Visitor& v) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].visit("dense" + std::to_string(i), v);
  }

 private:
  std::vector<DenseLayer> layers_;
};

class Cnn final : public Network {
 public:
  Cnn(const ModelSpec& s, std::mt19937_64& rng) {
    std::size_t in = s.in_channels, len = s.window_length;
    for (const auto& c : table::kCnnConvs) {
      len = detail::conv_out(len, c.kernel, c.stride, 0, "cnn conv");
      convs_.emplace_back(in, c.out_channels, c.kernel, c.stride, 0, rng);
      in = c.out_channels;
    }
    head_ = DenseLayer(in, s.n_classes, rng);
  }
  Var forward(Var x, Mode) override {
    Var h = x;
    for (auto& c : convs_) h = nn::relu(c(h));
    return head_(nn::global_avg_pool(h));
  }
  void visit(Visitor& v) override {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].visit("conv" + std::to_string(i), v);
    head_.visit("head", v);
  }

 private:
  std::vector<ConvLayer> convs_;
  DenseLayer head_;
};

class CnnLstm final : public Network {
 public:
  CnnLstm(const ModelSpec& s, std::mt19937_64& rng) {
    std::size_t in = s.in_channels, len = s.window_length;
    for (const auto& c : table::kCnnLstmConvs) {
      len = detail::conv_out(len, c.kernel, c.stride, 0, "cnn_lstm conv");
      convs_.emplace_back(in, c.out_channels, c.kernel, c.stride, 0, rng);
      in = c.out_channels;
    }
    lstm_ = LstmLayer(in, table::kLstmHidden, rng);
    head_ = DenseLayer(table::kLstmHidden, s.n_classes, rng);
  }
  Var forward(Var x, Mode) override {
    Var h = x;
    for (auto& c : convs_) h = nn::relu(c(h));
    return head_(lstm_(nn::swap_last_axes(h)));
  }
  void visit(Visitor& v) override {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].visit("conv" + std::to_string(i), v);
    lstm_.visit("lstm", v);
    head_.visit("head", v);
  }

 private:
  std::vector<ConvLayer> convs_;
  LstmLayer lstm_;
  DenseLayer head_;
};

/// Shared by RESNET1D and RESNET18: stem, optional max-pool, basic blocks,
/// global average pooling, linear head.
class ResNet final : public Network {
 public:
  ResNet(const ModelSpec& s, bool pooled_stem, const std::vector<std::pair<std::size_t, std::size_t>>& blocks,
         std::mt19937_64& rng)
      : pooled_(pooled_stem) {
    const auto& st = table::kResStem;
    std::size_t len = detail::conv_out(s.window_length, st.kernel, st.stride, 0, "resnet stem");
    stem_ = ConvLayer(s.in_channels, st.out_channels, st.kernel, st.stride, 0, rng);
    stem_bn_ = BatchNormLayer(st.out_channels);
    if (pooled_) len = detail::conv_out(len, table::kPoolKernel, table::kPoolStride, 0, "resnet stem pool");
    std::size_t in = st.out_channels;
    for (const auto& [width, stride] : blocks) {
      len = BasicBlock::out_length(len, stride);
      blocks_.emplace_back(in, width, stride, rng);
      in = width;
    }
    head_ = DenseLayer(in, s.n_classes, rng);
  }
  Var forward(Var x, Mode mode) override {
    Var h = nn::relu(stem_bn_(stem_(x), mode));
    if (pooled_) h = nn::max_pool1d(h, table::kPoolKernel, table::kPoolStride);
    for (auto& b : blocks_) h = b(h, mode);
    return head_(nn::global_avg_pool(h));
  }
  void visit(Visitor& v) override {
    stem_.visit("stem", v);
    stem_bn_.visit("stem_bn", v);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].visit("block" + std::to_string(i), v);
    head_.visit("head", v);
  }
  std::vector<BasicBlock>& blocks() { return blocks_; }

 private:
  bool pooled_;
  ConvLayer stem_;
  BatchNormLayer stem_bn_;
  std::vector<BasicBlock> blocks_;
  DenseLayer head_;
};

inline std::vector<std::pair<std::size_t, std::size_t>> resnet18_blocks() {
  std::vector<std::pair<std::size_t, std::size_t>> b;
  for (std::size_t w : table::kResNet18Widths)
    for (std::size_t i = 0; i < table::kResNet18BlocksPerStage; ++i) b.emplace_back(w, i == 0 ? 2 : 1);
  return b;
}

}  // namespace arch

/// A built architecture instance. Movable, not copyable; parameter addresses
/// stay fixed for the model's lifetime.
class Model {
 public:
  Model(ModelSpec spec, std::unique_ptr<Network> net) : spec_(spec), net_(std::move(net)) {
    Visitor v{[this](const std::string&, Parameter& p) { params_.push_back(&p); }, [](const std::string&, Tensor&) {}};
    net_->visit(v);
  }

  const ModelSpec& spec() const { return spec_; }
  Network& network() { return *net_; }

  /// Forward pass of a [B, in_channels, window_length] batch to [B, n_classes] logits.
  Var forward(Tape& tape, Tensor batch, Mode mode) {
    if (batch.rank() != 3 || batch.dim(1) != spec_.in_channels || batch.dim(2) != spec_.window_length) {
      throw ShapeError("model expects [B," + std::to_string(spec_.in_channels) + "," +
                       std::to_string(spec_.window_length) + "], got " + nn::shape_str(batch.shape));
    }
    if (batch.dim(0) == 0) throw ShapeError("empty batch");
    Var out = net_->forward(tape.input(std::move(batch)), mode);
    nn::require_finite(out.value(), "model forward");
    return out;
  }

  /// Eval-mode logits without keeping the tape.
  Tensor predict_logits(const Tensor& batch) {
    Tape tape;
    return forward(tape, batch, Mode::Eval).value();
  }

  const std::vector<Parameter*>& parameters() const { return params_; }

  std::size_t count_params() const {
    std::size_t n = 0;
    for (const Parameter* p : params_) n += p->size();
    return n;
  }

  /// Every named parameter and buffer, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> state() {
    std::vector<std::pair<std::string, Tensor*>> out;
    Visitor v{[&](const std::string& n, Parameter& p) { out.emplace_back(n, &p.value); },
              [&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); }};
    net_->visit(v);
    return out;
  }

 private:
  ModelSpec spec_;
  std::unique_ptr<Network> net_;
  std::vector<Parameter*> params_;
};

inline Model build(const ModelSpec& spec, std::uint64_t seed) {
  if (spec.in_channels == 0 || spec.window_length == 0 || spec.n_classes < 2) {
    throw SpecError("model spec needs positive channels/length and at least 2 classes");
  }
  std::mt19937_64 rng(seed);
  std::unique_ptr<Network> net;
  switch (spec.kind) {
    case ModelKind::MLP: net = std::make_unique<arch::Mlp>(spec, rng); break;
    case ModelKind::CNN: net = std::make_unique<arch::Cnn>(spec, rng); break;
    case ModelKind::CNN_LSTM: net = std::make_unique<arch::CnnLstm>(spec, rng); break;
    case ModelKind::RESNET1D: {
      std::vector<std::pair<std::size_t, std::size_t>> b(table::kResNet1dBlocks.begin(), table::kResNet1dBlocks.end());
      net = std::make_unique<arch::ResNet>(spec, false, b, rng);
      break;
    }
    case ModelKind::RESNET18: net = std::make_unique<arch::ResNet>(spec, true, arch::resnet18_blocks(), rng); break;
  }
  return Model(spec, std::move(net));
}

// Checkpoint: "ALNN1", u32 tag length, tag bytes, u32 entry count, then per
// entry u32 name length, name bytes, u32 rank, u64 dims, f64 payload.
// Little-endian throughout.
struct Checkpoint {
  std::string arch;
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor* find(std::string_view name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor& at(std::string_view name) const {
    const Tensor* t = find(name);
    if (!t) throw FormatError("checkpoint lacks entry '" + std::string(name) + "'");
    return *t;
  }
  bool operator==(const Checkpoint&) const = default;
};

inline constexpr char kCheckpointMagic[5] = {'A', 'L', 'N', 'N', '1'};

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  using prep::cache::put_le;
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.arch.size()));
  out.write(ck.arch.data(), static_cast<long>(ck.arch.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.entries.size()));
  for (const auto& [name, t] : ck.entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<long>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) put_le<std::uint64_t>(out, d);
    for (double v : t.values) put_le<double>(out, v);
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  using prep::cache::get_le;
  char magic[5];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  auto read_str = [&](std::uint32_t n) {
    if (n > (1u << 20)) throw FormatError("implausible string length in checkpoint");
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw FormatError("truncated checkpoint");
    return s;
  };
  Checkpoint ck;
  ck.arch = read_str(get_le<std::uint32_t>(in));
  const auto count = get_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_str(get_le<std::uint32_t>(in));
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(in);
    Tensor t(shape);
    for (double& v : t.values) v = get_le<double>(in);
    ck.entries.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_checkpoint(out, ck);
  if (!out) throw IoError("write failure on " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

/// Model parameters and buffers under "model." names.
inline Checkpoint export_model(Model& m) {
  Checkpoint ck{to_tag(m.spec().kind), {}};
  for (auto& [name, t] : m.state()) ck.entries.emplace_back("model." + name, *t);
  return ck;
}

inline void import_model(Model& m, const Checkpoint& ck) {
  if (ck.arch != to_tag(m.spec().kind)) throw FormatError("checkpoint architecture '" + ck.arch + "' does not match");
  for (auto& [name, t] : m.state()) {
    const Tensor& src = ck.at("model." + name);
    if (src.shape != t->shape) throw FormatError("shape mismatch for '" + name + "'");
    *t = src;
  }
}

}  // namespace alc::zoo
