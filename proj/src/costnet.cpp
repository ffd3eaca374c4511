#include "trav/costnet.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

namespace trav {

namespace {

struct Layer {
  std::size_t w_off = 0;  // [out][in] row-major
  std::size_t b_off = 0;
  int in = 0;
  int out = 0;
};

std::vector<Layer> layout(const ArchDescriptor& arch) {
  std::vector<Layer> layers;
  std::size_t off = 0;
  int in = arch.input_width();
  auto add = [&](int out) {
    Layer l{off, off + static_cast<std::size_t>(out) * in, in, out};
    off = l.b_off + out;
    layers.push_back(l);
    in = out;
  };
  for (int w : arch.hidden) add(w);
  add(2);
  return layers;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Indices and values of the nonzero patch inputs around a cell; unobserved or
// out-of-grid neighbours contribute only zeros.
struct SparseInput {
  std::vector<int> index;
  std::vector<double> value;
};

void gather_patch(const std::vector<double>& tensor, int size, int patch, int channels, int row, int col,
                  SparseInput& x) {
  x.index.clear();
  x.value.clear();
  const int half = patch / 2;
  for (int dr = -half; dr <= half; ++dr) {
    const int r = row + dr;
    if (r < 0 || r >= size) continue;
    for (int dc = -half; dc <= half; ++dc) {
      const int c = col + dc;
      if (c < 0 || c >= size) continue;
      const std::size_t base = (static_cast<std::size_t>(r) * size + c) * channels;
      if (tensor[base] == 0.0) continue;  // mask channel
      const int p = ((dr + half) * patch + (dc + half)) * channels;
      for (int ch = 0; ch < channels; ++ch) {
        const double v = tensor[base + ch];
        if (v != 0.0) {
          x.index.push_back(p + ch);
          x.value.push_back(v);
        }
      }
    }
  }
}

// Activations of one forward pass; acts[l] is the output of layer l
// (post-tanh for hidden layers, raw logits for the last).
struct Trace {
  std::vector<std::vector<double>> acts;
};

void forward_cell(std::span<const double> theta, const std::vector<Layer>& layers, const SparseInput& x,
                  Trace& trace) {
  trace.acts.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& L = layers[l];
    auto& out = trace.acts[l];
    out.assign(L.out, 0.0);
    const double* w = theta.data() + L.w_off;
    for (int o = 0; o < L.out; ++o) {
      double a = theta[L.b_off + o];
      const double* row = w + static_cast<std::size_t>(o) * L.in;
      if (l == 0) {
        for (std::size_t j = 0; j < x.index.size(); ++j) a += row[x.index[j]] * x.value[j];
      } else {
        const auto& prev = trace.acts[l - 1];
        for (int j = 0; j < L.in; ++j) a += row[j] * prev[j];
      }
      out[o] = (l + 1 < layers.size()) ? std::tanh(a) : a;
    }
  }
}

CellPrediction head(const Trace& trace) {
  const auto& o = trace.acts.back();
  return {sigmoid(o[0]), kLogVarMin + (kLogVarMax - kLogVarMin) * sigmoid(o[1])};
}

// Accumulates scale * d(loss)/d(theta) of one sample into g.
void backward_cell(std::span<const double> theta, const std::vector<Layer>& layers, const SparseInput& x,
                   const Trace& trace, double d_o0, double d_o1, std::span<double> g) {
  std::vector<double> delta{d_o0, d_o1};
  std::vector<double> next;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const Layer& L = layers[li];
    for (int o = 0; o < L.out; ++o) g[L.b_off + o] += delta[o];
    if (li == 0) {
      for (int o = 0; o < L.out; ++o) {
        double* gw = g.data() + L.w_off + static_cast<std::size_t>(o) * L.in;
        for (std::size_t j = 0; j < x.index.size(); ++j) gw[x.index[j]] += delta[o] * x.value[j];
      }
      break;
    }
    const auto& prev = trace.acts[li - 1];
    next.assign(L.in, 0.0);
    for (int o = 0; o < L.out; ++o) {
      double* gw = g.data() + L.w_off + static_cast<std::size_t>(o) * L.in;
      const double* w = theta.data() + L.w_off + static_cast<std::size_t>(o) * L.in;
      for (int j = 0; j < L.in; ++j) {
        gw[j] += delta[o] * prev[j];
        next[j] += w[j] * delta[o];
      }
    }
    for (int j = 0; j < L.in; ++j) next[j] *= 1.0 - prev[j] * prev[j];
    delta.swap(next);
  }
}

void check_grid(const ModelParams& params, const FeatureGrid& grid) {
  if (params.arch.channels_in != FeatureGrid::kChannels)
    throw ValidationError("channels_in: architecture expects " + std::to_string(params.arch.channels_in) +
                          " channels, grid has " + std::to_string(FeatureGrid::kChannels));
  if (params.theta.size() != params.arch.param_count())
    throw ValidationError("theta: length does not match the architecture");
  if (grid.size() <= 0) throw ValidationError("grid: empty grid");
}

double total_weight(std::span<const TrainBatch> batches) {
  double w = 0.0;
  for (const auto& b : batches) {
    for (const auto& s : b.samples) w += s.weight;
  }
  return w;
}

void check_batches(std::span<const TrainBatch> batches) {
  bool any = false;
  for (const auto& b : batches) {
    b.validate();
    any = any || !b.samples.empty();
  }
  if (!any) throw ValidationError("samples: batch has no interaction samples");
}

// Calls fn(sample, layers, input, trace) for every sample, in batch order.
template <typename Fn>
void for_each_sample(const ModelParams& params, std::span<const TrainBatch> batches, Fn&& fn) {
  const auto layers = layout(params.arch);
  SparseInput x;
  Trace trace;
  for (const auto& b : batches) {
    if (b.samples.empty()) continue;
    check_grid(params, b.grid);
    const auto tensor = b.grid.input_tensor();
    for (const auto& s : b.samples) {
      gather_patch(tensor, b.grid.size(), params.arch.patch, params.arch.channels_in, s.cell.row, s.cell.col, x);
      forward_cell(params.theta, layers, x, trace);
      fn(s, layers, x, trace);
    }
  }
}

double sample_nll(double y, const CellPrediction& p) {
  const double r = y - p.mu;
  return 0.5 * r * r * std::exp(-p.log_var) + 0.5 * p.log_var;
}

}  // namespace

void ArchDescriptor::validate() const {
  if (patch <= 0 || patch % 2 == 0) throw ValidationError("patch: must be a positive odd integer");
  if (channels_in <= 0) throw ValidationError("channels_in: must be positive");
  for (int w : hidden) {
    if (w <= 0) throw ValidationError("hidden: layer widths must be positive");
  }
}

std::size_t ArchDescriptor::param_count() const {
  std::size_t n = 0;
  int in = input_width();
  for (int w : hidden) {
    n += static_cast<std::size_t>(w) * in + w;
    in = w;
  }
  return n + 2u * in + 2u;
}

void ModelParams::validate() const {
  arch.validate();
  if (theta.size() != arch.param_count()) throw ValidationError("theta: length does not match the architecture");
  if (!std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); }))
    throw ValidationError("theta: entries must be finite");
}

void TrainBatch::validate() const {
  for (const auto& s : samples) {
    if (!grid.in_range(s.cell)) throw ValidationError("samples: cell index outside the grid");
    if (!(s.label >= 0.0 && s.label <= 1.0)) throw ValidationError("samples: label must lie in [0, 1]");
    if (!(s.weight > 0.0)) throw ValidationError("samples: weight must be positive");
  }
}

ModelParams init_params(const ArchDescriptor& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams p{arch, std::vector<double>(arch.param_count(), 0.0)};
  std::mt19937_64 rng(seed);
  for (const Layer& L : layout(arch)) {
    const double limit = std::sqrt(6.0 / (L.in + L.out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < static_cast<std::size_t>(L.in) * L.out; ++i) p.theta[L.w_off + i] = dist(rng);
  }
  return p;
}

CostMap forward(const ModelParams& params, const FeatureGrid& grid) {
  check_grid(params, grid);
  const auto layers = layout(params.arch);
  const auto tensor = grid.input_tensor();
  const int h = grid.size();
  CostMap map{h, std::vector<double>(static_cast<std::size_t>(h) * h), std::vector<double>(static_cast<std::size_t>(h) * h)};
  SparseInput x;
  Trace trace;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < h; ++c) {
      gather_patch(tensor, h, params.arch.patch, params.arch.channels_in, r, c, x);
      forward_cell(params.theta, layers, x, trace);
      const auto p = head(trace);
      map.mu[static_cast<std::size_t>(r) * h + c] = p.mu;
      map.log_var[static_cast<std::size_t>(r) * h + c] = p.log_var;
    }
  }
  return map;
}

CellPrediction predict_cell(const ModelParams& params, const FeatureGrid& grid, CellIndex cell) {
  check_grid(params, grid);
  if (!grid.in_range(cell)) throw ValidationError("cell: outside the grid");
  SparseInput x;
  Trace trace;
  gather_patch(grid.input_tensor(), grid.size(), params.arch.patch, params.arch.channels_in, cell.row, cell.col, x);
  forward_cell(params.theta, layout(params.arch), x, trace);
  return head(trace);
}

double nll_loss(const ModelParams& params, const TrainBatch& batch) {
  return nll_loss(params, std::span<const TrainBatch>(&batch, 1));
}

double nll_loss(const ModelParams& params, std::span<const TrainBatch> batches) {
  check_batches(batches);
  double sum = 0.0;
  for_each_sample(params, batches, [&](const InteractionSample& s, auto&, auto&, const Trace& t) {
    sum += s.weight * sample_nll(s.label, head(t));
  });
  return sum / total_weight(batches);
}

std::vector<double> grad(const ModelParams& params, const TrainBatch& batch) {
  return grad(params, std::span<const TrainBatch>(&batch, 1));
}

std::vector<double> grad(const ModelParams& params, std::span<const TrainBatch> batches) {
  check_batches(batches);
  const double inv_w = 1.0 / total_weight(batches);
  std::vector<double> g(params.theta.size(), 0.0);
  for_each_sample(params, batches,
                  [&](const InteractionSample& s, const std::vector<Layer>& layers, const SparseInput& x,
                      const Trace& t) {
                    const auto p = head(t);
                    const double r = s.label - p.mu;
                    const double inv_var = std::exp(-p.log_var);
                    const double d_mu = -r * inv_var;
                    const double d_lv = 0.5 - 0.5 * r * r * inv_var;
                    const double s2 = sigmoid(t.acts.back()[1]);
                    const double scale = s.weight * inv_w;
                    backward_cell(params.theta, layers, x, t, scale * d_mu * p.mu * (1.0 - p.mu),
                                  scale * d_lv * (kLogVarMax - kLogVarMin) * s2 * (1.0 - s2), g);
                  });
  return g;
}

ModelParams sgd_step(const ModelParams& params, std::span<const double> g, double lr) {
  if (g.size() != params.theta.size()) throw ValidationError("g: gradient length does not match theta");
  ModelParams out = params;
  for (std::size_t i = 0; i < g.size(); ++i) out.theta[i] -= lr * g[i];
  return out;
}

FitMetrics fit_metrics(const ModelParams& params, std::span<const TrainBatch> batches) {
  FitMetrics m;
  for_each_sample(params, batches, [&](const InteractionSample& s, auto&, auto&, const Trace& t) {
    const auto p = head(t);
    const double err = std::abs(s.label - p.mu);
    m.nll += s.weight * sample_nll(s.label, p);
    m.mae += s.weight * err;
    if (err <= std::exp(0.5 * p.log_var)) m.calibration += s.weight;
    m.weight += s.weight;
  });
  if (m.weight <= 0.0) throw ValidationError("samples: no interaction samples to evaluate");
  m.nll /= m.weight;
  m.mae /= m.weight;
  m.calibration /= m.weight;
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'M', 'V', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    if (pos_ + sizeof(T) > bytes_.size()) throw CheckpointError(CheckpointError::Code::Truncated, "checkpoint: truncated");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
  params.validate();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(params.arch.patch));
  put_le(out, static_cast<std::uint32_t>(params.arch.channels_in));
  put_le(out, static_cast<std::uint32_t>(params.arch.hidden.size()));
  for (int w : params.arch.hidden) put_le(out, static_cast<std::uint32_t>(w));
  put_le(out, static_cast<std::uint64_t>(params.theta.size()));
  for (double v : params.theta) put_le(out, v);
  put_le(out, crc32_of(out));
  return out;
}

ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  using Code = CheckpointError::Code;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(Code::BadMagic, "checkpoint: bad magic");
  Reader in(bytes.subspan(4));
  if (in.get<std::uint16_t>() != kCheckpointVersion) throw CheckpointError(Code::BadVersion, "checkpoint: unsupported version");
  if (bytes.size() < 4 + 2 + 4) throw CheckpointError(Code::Truncated, "checkpoint: truncated");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (crc32_of(body) != tail.get<std::uint32_t>()) throw CheckpointError(Code::BadCrc, "checkpoint: CRC mismatch");

  Reader r(body.subspan(6));
  ModelParams p;
  p.arch.patch = static_cast<int>(r.get<std::uint32_t>());
  p.arch.channels_in = static_cast<int>(r.get<std::uint32_t>());
  const auto widths = r.get<std::uint32_t>();
  if (widths > 1024) throw CheckpointError(Code::ArchMismatch, "checkpoint: implausible layer count");
  p.arch.hidden.clear();
  for (std::uint32_t i = 0; i < widths; ++i) p.arch.hidden.push_back(static_cast<int>(r.get<std::uint32_t>()));
  try {
    p.arch.validate();
  } catch (const ValidationError& e) {
    throw CheckpointError(Code::ArchMismatch, std::string("checkpoint: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  if (count != p.arch.param_count()) throw CheckpointError(Code::CountMismatch, "checkpoint: parameter count does not match architecture");
  if (body.size() - 6 - r.pos() != count * 8) throw CheckpointError(Code::CountMismatch, "checkpoint: payload size does not match parameter count");
  p.theta.resize(count);
  for (auto& v : p.theta) v = r.get<double>();
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace trav
