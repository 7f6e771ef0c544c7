#include "emo/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "emo/kernels.hpp"
#include "emo/serialize.hpp"

namespace emo::ad {

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

template <typename T>
T act_apply(Act act, T z) {
  switch (act) {
    case Act::Linear: return z;
    case Act::ReLU: return z > T(0) ? z : T(0);
    case Act::Tanh: return std::tanh(z);
    case Act::Sigmoid: return T(1) / (T(1) + std::exp(-z));
  }
  return z;
}

// Derivative factor expressed through the activation output y.
template <typename T>
T act_factor(Act act, T y) {
  switch (act) {
    case Act::Linear: return T(1);
    case Act::ReLU: return y > T(0) ? T(1) : T(0);
    case Act::Tanh: return T(1) - y * y;
    case Act::Sigmoid: return y * (T(1) - y);
  }
  return T(1);
}

template <typename T>
[[noreturn]] void shape_error(const std::string& node, const std::string& what,
                              const std::vector<std::size_t>& got,
                              const std::vector<std::size_t>& want) {
  throw Error(ErrorCode::ShapeMismatch, "node '" + node + "' " + what +
                                            ": got " + shape_str(got) +
                                            ", want " + shape_str(want));
}

template <typename T>
inline T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

// ---------------------------------------------------------------------------
// Nodes
// ---------------------------------------------------------------------------

template <typename T>
class DenseNode final : public Node<T> {
 public:
  DenseNode(LayerGraph<T>& g, std::string name, std::string in,
            std::size_t in_dim, std::size_t units, Act act)
      : Node<T>(std::move(name)),
        in_(std::move(in)),
        in_dim_(in_dim),
        units_(units),
        act_(act) {
    auto& w = g.add_param(this->name_ + ".w", {in_dim_, units_});
    g.glorot_init(w, in_dim_, units_);
    g.add_param(this->name_ + ".b", {units_});
  }

  void forward(LayerGraph<T>& g, Mode) override {
    const Tensor<T>& x = g.tensor(in_);
    if (x.last_dim() != in_dim_)
      shape_error<T>(this->name_, "input width", x.shape, {in_dim_});
    const std::size_t rows = x.rows();
    std::vector<std::size_t> oshape = x.shape;
    oshape.back() = units_;
    Tensor<T>& y = g.make_output(this->name_, oshape);
    const Tensor<T>& w = g.param(this->name_ + ".w").t;
    const Tensor<T>& b = g.param(this->name_ + ".b").t;
    kern::gemm_nn(x.v.data(), w.v.data(), y.v.data(), rows, in_dim_, units_,
                  false, default_exec());
    par::parallel_for(
        rows,
        [&](std::size_t r) {
          T* yr = y.v.data() + r * units_;
          for (std::size_t j = 0; j < units_; ++j)
            yr[j] = act_apply(act_, yr[j] + b.v[j]);
        },
        8);
  }

  void backward(LayerGraph<T>& g) override {
    Tensor<T>& x = g.tensor(in_);
    Tensor<T>& y = g.tensor(this->name_);
    Param<T>& w = g.param(this->name_ + ".w");
    Param<T>& b = g.param(this->name_ + ".b");
    const std::size_t rows = x.rows();
    // dz = dy ⊙ act'(y)
    std::vector<T> dz(rows * units_);
    par::parallel_for(
        rows,
        [&](std::size_t r) {
          for (std::size_t j = 0; j < units_; ++j) {
            const std::size_t k = r * units_ + j;
            dz[k] = y.g[k] * act_factor(act_, y.v[k]);
          }
        },
        8);
    kern::gemm_tn(x.v.data(), dz.data(), w.t.g.data(), rows, in_dim_, units_,
                  true, default_exec());
    kern::gemm_nt(dz.data(), w.t.v.data(), x.g.data(), rows, units_, in_dim_,
                  true, default_exec());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < units_; ++j) b.t.g[j] += dz[r * units_ + j];
  }

  std::vector<std::string> param_names() const override {
    return {this->name_ + ".w", this->name_ + ".b"};
  }

 private:
  std::string in_;
  std::size_t in_dim_, units_;
  Act act_;
};

template <typename T>
class SoftmaxNode final : public Node<T> {
 public:
  SoftmaxNode(std::string name, std::string in)
      : Node<T>(std::move(name)), in_(std::move(in)) {}

  void forward(LayerGraph<T>& g, Mode) override {
    const Tensor<T>& x = g.tensor(in_);
    Tensor<T>& y = g.make_output(this->name_, x.shape);
    kern::softmax_rows(x.v.data(), y.v.data(), x.rows(), x.last_dim(),
                       default_exec());
  }

  void backward(LayerGraph<T>& g) override {
    Tensor<T>& x = g.tensor(in_);
    const Tensor<T>& y = g.tensor(this->name_);
    const std::size_t n = y.last_dim();
    par::parallel_for(
        y.rows(),
        [&](std::size_t r) {
          const T* yv = y.v.data() + r * n;
          const T* dy = y.g.data() + r * n;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += dy[j] * yv[j];
          T* dx = x.g.data() + r * n;
          for (std::size_t j = 0; j < n; ++j) dx[j] += yv[j] * (dy[j] - dot);
        },
        8);
  }

 private:
  std::string in_;
};

template <typename T>
class DropoutNode final : public Node<T> {
 public:
  DropoutNode(std::string name, std::string in, T rate)
      : Node<T>(std::move(name)), in_(std::move(in)), rate_(rate) {
    if (!(rate >= T(0) && rate < T(1)))
      throw Error(ErrorCode::Config, "dropout rate must be in [0,1)");
  }

  void forward(LayerGraph<T>& g, Mode mode) override {
    const Tensor<T>& x = g.tensor(in_);
    Tensor<T>& y = g.make_output(this->name_, x.shape);
    if (mode == Mode::Eval || rate_ == T(0)) {
      // Identity at eval time, exactly.
      std::copy(x.v.begin(), x.v.end(), y.v.begin());
      train_mask_ = false;
      return;
    }
    // Inverted scaling: kept activations divide by the keep probability.
    const T keep = T(1) - rate_;
    const T scale = T(1) / keep;
    mask_.resize(x.v.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < mask_.size(); ++i)
      mask_[i] = u(g.rng()) < static_cast<double>(keep) ? scale : T(0);
    par::parallel_for(
        x.v.size(), [&](std::size_t i) { y.v[i] = x.v[i] * mask_[i]; }, 1024);
    train_mask_ = true;
  }

  void backward(LayerGraph<T>& g) override {
    Tensor<T>& x = g.tensor(in_);
    const Tensor<T>& y = g.tensor(this->name_);
    if (!train_mask_) {
      for (std::size_t i = 0; i < x.g.size(); ++i) x.g[i] += y.g[i];
      return;
    }
    par::parallel_for(
        x.g.size(), [&](std::size_t i) { x.g[i] += y.g[i] * mask_[i]; }, 1024);
  }

 private:
  std::string in_;
  T rate_;
  std::vector<T> mask_;
  bool train_mask_ = false;
};

template <typename T>
class EmbeddingNode final : public Node<T> {
 public:
  EmbeddingNode(LayerGraph<T>& g, std::string name, std::string ids,
                std::string bits, std::size_t vocab, std::size_t dim)
      : Node<T>(std::move(name)),
        ids_(std::move(ids)),
        bits_(std::move(bits)),
        vocab_(vocab),
        dim_(dim) {
    auto& tab = g.add_param(this->name_ + ".table", {vocab_, dim_});
    g.glorot_init(tab, vocab_, dim_);
  }

  void forward(LayerGraph<T>& g, Mode) override {
    const IdMatrix& ids = g.ids(ids_);
    const Tensor<T>& bits = g.tensor(bits_);
    if (bits.v.size() != ids.v.size())
      shape_error<T>(this->name_, "trigger-bit input", bits.shape,
                     {ids.rows, ids.cols});
    for (const int id : ids.v)
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_)
        throw Error(ErrorCode::ShapeMismatch,
                    "node '" + this->name_ + "': token id " +
                        std::to_string(id) + " outside table of " +
                        std::to_string(vocab_));
    const Tensor<T>& tab = g.param(this->name_ + ".table").t;
    Tensor<T>& y =
        g.make_output(this->name_, {ids.rows, ids.cols, dim_ + 1});
    par::parallel_for(
        ids.v.size(),
        [&](std::size_t k) {
          T* yr = y.v.data() + k * (dim_ + 1);
          const T* row =
              tab.v.data() + static_cast<std::size_t>(ids.v[k]) * dim_;
          std::copy(row, row + dim_, yr);
          yr[dim_] = bits.v[k];
        },
        8);
  }

  void backward(LayerGraph<T>& g) override {
    const IdMatrix& ids = g.ids(ids_);
    const Tensor<T>& y = g.tensor(this->name_);
    Param<T>& tab = g.param(this->name_ + ".table");
    // Rows collide (repeated ids); columns do not, so parallelize columns.
    par::parallel_for(
        dim_,
        [&](std::size_t j) {
          for (std::size_t k = 0; k < ids.v.size(); ++k) {
            tab.t.g[static_cast<std::size_t>(ids.v[k]) * dim_ + j] +=
                y.g[k * (dim_ + 1) + j];
          }
        },
        4);
  }

  std::vector<std::string> param_names() const override {
    return {this->name_ + ".table"};
  }

 private:
  std::string ids_, bits_;
  std::size_t vocab_, dim_;
};

template <typename T>
class LstmNode final : public Node<T> {
 public:
  LstmNode(LayerGraph<T>& g, std::string name, std::string in,
           std::string lengths, std::size_t in_dim, std::size_t hidden,
           bool bidir)
      : Node<T>(std::move(name)),
        in_(std::move(in)),
        lengths_(std::move(lengths)),
        in_dim_(in_dim),
        hidden_(hidden),
        bidir_(bidir) {
    for (int d = 0; d < (bidir_ ? 2 : 1); ++d) {
      const std::string p = dir_prefix(d);
      auto& wx = g.add_param(p + ".wx", {in_dim_, 4 * hidden_});
      g.glorot_init(wx, in_dim_, 4 * hidden_);
      auto& wh = g.add_param(p + ".wh", {hidden_, 4 * hidden_});
      g.glorot_init(wh, hidden_, 4 * hidden_);
      auto& b = g.add_param(p + ".b", {4 * hidden_});
      // Forget-gate bias starts at 1.
      for (std::size_t h = 0; h < hidden_; ++h) b.v[hidden_ + h] = T(1);
    }
  }

  void forward(LayerGraph<T>& g, Mode) override {
    const Tensor<T>& x = g.tensor(in_);
    if (x.shape.size() != 3 || x.last_dim() != in_dim_)
      shape_error<T>(this->name_, "input", x.shape, {0, 0, in_dim_});
    const std::vector<int>& lens = g.lengths(lengths_);
    const std::size_t B = x.shape[0], L = x.shape[1];
    if (lens.size() != B)
      throw Error(ErrorCode::ShapeMismatch,
                  "node '" + this->name_ + "': lengths size " +
                      std::to_string(lens.size()) + " != batch " +
                      std::to_string(B));
    const std::size_t dirs = bidir_ ? 2 : 1;
    Tensor<T>& y = g.make_output(this->name_, {B, L, dirs * hidden_});
    gates_.assign(dirs, {});
    cells_.assign(dirs, {});
    tanhc_.assign(dirs, {});
    for (std::size_t d = 0; d < dirs; ++d) run_dir(g, x, y, lens, d);
  }

  void backward(LayerGraph<T>& g) override {
    Tensor<T>& x = g.tensor(in_);
    Tensor<T>& y = g.tensor(this->name_);
    const std::vector<int>& lens = g.lengths(lengths_);
    const std::size_t dirs = bidir_ ? 2 : 1;
    for (std::size_t d = 0; d < dirs; ++d) back_dir(g, x, y, lens, d);
  }

  std::vector<std::string> param_names() const override {
    std::vector<std::string> out;
    for (int d = 0; d < (bidir_ ? 2 : 1); ++d) {
      const std::string p = dir_prefix(d);
      out.push_back(p + ".wx");
      out.push_back(p + ".wh");
      out.push_back(p + ".b");
    }
    return out;
  }

 private:
  std::string dir_prefix(int d) const {
    return this->name_ + (d == 0 ? ".fwd" : ".rev");
  }

  // time index for processing step s in direction d
  static std::size_t step_time(std::size_t s, std::size_t L, std::size_t d) {
    return d == 0 ? s : L - 1 - s;
  }

  void run_dir(LayerGraph<T>& g, const Tensor<T>& x, Tensor<T >& y,
               const std::vector<int>& lens, std::size_t d) {
    const std::size_t B = x.shape[0], L = x.shape[1];
    const std::size_t H = hidden_, G = 4 * H;
    const Tensor<T>& wx = g.param(dir_prefix(d) + ".wx").t;
    const Tensor<T>& wh = g.param(dir_prefix(d) + ".wh").t;
    const Tensor<T>& b = g.param(dir_prefix(d) + ".b").t;
    gates_[d].assign(B * L * G, T(0));
    cells_[d].assign(B * L * H, T(0));
    tanhc_[d].assign(B * L * H, T(0));

    std::vector<T> hprev(B * H, T(0)), cprev(B * H, T(0));
    std::vector<T> xt(B * in_dim_), z(B * G);
    for (std::size_t s = 0; s < L; ++s) {
      const std::size_t t = step_time(s, L, d);
      for (std::size_t bi = 0; bi < B; ++bi)
        std::copy(x.v.data() + (bi * L + t) * in_dim_,
                  x.v.data() + (bi * L + t + 1) * in_dim_,
                  xt.data() + bi * in_dim_);
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t j = 0; j < G; ++j) z[bi * G + j] = b.v[j];
      kern::gemm_nn(xt.data(), wx.v.data(), z.data(), B, in_dim_, G, true,
                    default_exec());
      kern::gemm_nn(hprev.data(), wh.v.data(), z.data(), B, H, G, true,
                    default_exec());
      par::parallel_for(
          B,
          [&](std::size_t bi) {
            T* hp = hprev.data() + bi * H;
            T* cp = cprev.data() + bi * H;
            if (t >= static_cast<std::size_t>(lens[bi])) {
              std::fill(hp, hp + H, T(0));
              std::fill(cp, cp + H, T(0));
              return;
            }
            const T* zr = z.data() + bi * G;
            T* gr = gates_[d].data() + (bi * L + t) * G;
            T* cr = cells_[d].data() + (bi * L + t) * H;
            T* tr = tanhc_[d].data() + (bi * L + t) * H;
            T* yr = y.v.data() + (bi * L + t) * (bidir_ ? 2 : 1) * H + d * H;
            for (std::size_t h = 0; h < H; ++h) {
              const T ig = sigmoid(zr[h]);
              const T fg = sigmoid(zr[H + h]);
              const T gg = std::tanh(zr[2 * H + h]);
              const T og = sigmoid(zr[3 * H + h]);
              const T c = fg * cp[h] + ig * gg;
              const T tc = std::tanh(c);
              gr[h] = ig;
              gr[H + h] = fg;
              gr[2 * H + h] = gg;
              gr[3 * H + h] = og;
              cr[h] = c;
              tr[h] = tc;
              yr[h] = og * tc;
              hp[h] = og * tc;
              cp[h] = c;
            }
          },
          1);
    }
  }

  void back_dir(LayerGraph<T>& g, Tensor<T>& x, const Tensor<T>& y,
                const std::vector<int>& lens, std::size_t d) {
    const std::size_t B = x.shape[0], L = x.shape[1];
    const std::size_t H = hidden_, G = 4 * H;
    const std::string p = dir_prefix(d);
    const Tensor<T>& wx = g.param(p + ".wx").t;
    const Tensor<T>& wh = g.param(p + ".wh").t;
    Param<T>& dwx = g.param(p + ".wx");
    Param<T>& dwh = g.param(p + ".wh");
    Param<T>& db = g.param(p + ".b");
    const std::size_t ow = (bidir_ ? 2 : 1) * H;  // output width

    std::vector<T> dh_next(B * H, T(0)), dc_next(B * H, T(0));
    std::vector<T> dz(B * G), xt(B * in_dim_), hprev(B * H), dxt(B * in_dim_);
    for (std::size_t s = L; s-- > 0;) {
      const std::size_t t = step_time(s, L, d);
      // Gather x_t and h_{t-1} (state before this step).
      for (std::size_t bi = 0; bi < B; ++bi) {
        std::copy(x.v.data() + (bi * L + t) * in_dim_,
                  x.v.data() + (bi * L + t + 1) * in_dim_,
                  xt.data() + bi * in_dim_);
        T* hp = hprev.data() + bi * H;
        bool has_prev = false;
        std::size_t tprev = 0;
        if (d == 0 && t > 0 && t - 1 < static_cast<std::size_t>(lens[bi]))
          has_prev = true, tprev = t - 1;
        if (d == 1 && t + 1 < L && t + 1 < static_cast<std::size_t>(lens[bi]))
          has_prev = true, tprev = t + 1;
        if (has_prev)
          std::copy(y.v.data() + (bi * L + tprev) * ow + d * H,
                    y.v.data() + (bi * L + tprev) * ow + d * H + H, hp);
        else
          std::fill(hp, hp + H, T(0));
      }
      par::parallel_for(
          B,
          [&](std::size_t bi) {
            T* dzr = dz.data() + bi * G;
            T* dhn = dh_next.data() + bi * H;
            T* dcn = dc_next.data() + bi * H;
            if (t >= static_cast<std::size_t>(lens[bi])) {
              std::fill(dzr, dzr + G, T(0));
              std::fill(dhn, dhn + H, T(0));
              std::fill(dcn, dcn + H, T(0));
              return;
            }
            const T* gr = gates_[d].data() + (bi * L + t) * G;
            const T* tr = tanhc_[d].data() + (bi * L + t) * H;
            const T* dyr = y.g.data() + (bi * L + t) * ow + d * H;
            bool has_prev = false;
            std::size_t tprev = 0;
            if (d == 0 && t > 0) has_prev = true, tprev = t - 1;
            if (d == 1 && t + 1 < static_cast<std::size_t>(lens[bi]))
              has_prev = true, tprev = t + 1;
            for (std::size_t h = 0; h < H; ++h) {
              const T ig = gr[h], fg = gr[H + h], gg = gr[2 * H + h],
                      og = gr[3 * H + h];
              const T tc = tr[h];
              const T cprev =
                  has_prev ? cells_[d][(bi * L + tprev) * H + h] : T(0);
              const T dh = dyr[h] + dhn[h];
              const T dog = dh * tc;
              const T dc = dcn[h] + dh * og * (T(1) - tc * tc);
              const T dig = dc * gg;
              const T dgg = dc * ig;
              const T dfg = dc * cprev;
              dcn[h] = dc * fg;  // becomes dc_next for the previous step
              dzr[h] = dig * ig * (T(1) - ig);
              dzr[H + h] = dfg * fg * (T(1) - fg);
              dzr[2 * H + h] = dgg * (T(1) - gg * gg);
              dzr[3 * H + h] = dog * og * (T(1) - og);
            }
          },
          1);
      // Parameter gradients and downstream grads.
      kern::gemm_tn(xt.data(), dz.data(), dwx.t.g.data(), B, in_dim_, G, true,
                    default_exec());
      kern::gemm_tn(hprev.data(), dz.data(), dwh.t.g.data(), B, H, G, true,
                    default_exec());
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t j = 0; j < G; ++j) db.t.g[j] += dz[bi * G + j];
      kern::gemm_nt(dz.data(), wx.v.data(), dxt.data(), B, G, in_dim_, false,
                    default_exec());
      for (std::size_t bi = 0; bi < B; ++bi) {
        if (t >= static_cast<std::size_t>(lens[bi])) continue;
        T* dst = x.g.data() + (bi * L + t) * in_dim_;
        const T* src = dxt.data() + bi * in_dim_;
        for (std::size_t j = 0; j < in_dim_; ++j) dst[j] += src[j];
      }
      // dh_{t-1} = dz · Wh^T (invalid rows stay zero because dz rows are 0).
      kern::gemm_nt(dz.data(), wh.v.data(), dh_next.data(), B, G, H, false,
                    default_exec());
    }
  }

  std::string in_, lengths_;
  std::size_t in_dim_, hidden_;
  bool bidir_;
  // caches indexed [dir][(b*L+t)*width + h]
  std::vector<std::vector<T>> gates_, cells_, tanhc_;
};

template <typename T>
class Conv1dNode final : public Node<T> {
 public:
  Conv1dNode(LayerGraph<T>& g, std::string name, std::string in,
             std::string lengths, std::size_t cin, std::size_t filters,
             std::size_t kernel, Act act)
      : Node<T>(std::move(name)),
        in_(std::move(in)),
        lengths_(std::move(lengths)),
        cin_(cin),
        filters_(filters),
        kernel_(kernel),
        act_(act) {
    auto& w = g.add_param(this->name_ + ".w", {kernel_, cin_, filters_});
    g.glorot_init(w, kernel_ * cin_, filters_);
    g.add_param(this->name_ + ".b", {filters_});
  }

  void forward(LayerGraph<T>& g, Mode) override {
    const Tensor<T>& x = g.tensor(in_);
    if (x.shape.size() != 3 || x.last_dim() != cin_)
      shape_error<T>(this->name_, "input", x.shape, {0, 0, cin_});
    const std::vector<int>& lens = g.lengths(lengths_);
    const std::size_t B = x.shape[0], L = x.shape[1];
    Tensor<T>& y = g.make_output(this->name_, {B, L, filters_});
    const Tensor<T>& w = g.param(this->name_ + ".w").t;
    const Tensor<T>& b = g.param(this->name_ + ".b").t;
    for (std::size_t bi = 0; bi < B; ++bi) {
      const std::size_t len = static_cast<std::size_t>(lens[bi]);
      if (len == 0) continue;
      kern::conv1d_forward(x.v.data() + bi * L * cin_, w.v.data(), b.v.data(),
                           y.v.data() + bi * L * filters_, len, cin_, filters_,
                           kernel_, default_exec());
      T* yb = y.v.data() + bi * L * filters_;
      par::parallel_for(
          len * filters_,
          [&](std::size_t k) { yb[k] = act_apply(act_, yb[k]); }, 256);
    }
  }

  void backward(LayerGraph<T>& g) override {
    Tensor<T>& x = g.tensor(in_);
    const Tensor<T>& y = g.tensor(this->name_);
    const std::vector<int>& lens = g.lengths(lengths_);
    const std::size_t B = x.shape[0], L = x.shape[1];
    const Tensor<T>& w = g.param(this->name_ + ".w").t;
    Param<T>& dw = g.param(this->name_ + ".w");
    Param<T>& db = g.param(this->name_ + ".b");
    std::vector<T> dz(L * filters_);
    for (std::size_t bi = 0; bi < B; ++bi) {
      const std::size_t len = static_cast<std::size_t>(lens[bi]);
      if (len == 0) continue;
      const T* yb = y.v.data() + bi * L * filters_;
      const T* dyb = y.g.data() + bi * L * filters_;
      for (std::size_t k = 0; k < len * filters_; ++k)
        dz[k] = dyb[k] * act_factor(act_, yb[k]);
      kern::conv1d_backward(x.v.data() + bi * L * cin_, w.v.data(), dz.data(),
                            x.g.data() + bi * L * cin_, dw.t.g.data(),
                            db.t.g.data(), len, cin_, filters_, kernel_,
                            default_exec());
    }
  }

  std::vector<std::string> param_names() const override {
    return {this->name_ + ".w", this->name_ + ".b"};
  }

 private:
  std::string in_, lengths_;
  std::size_t cin_, filters_, kernel_;
  Act act_;
};

template <typename T>
class GlobalMaxPoolNode final : public Node<T> {
 public:
  GlobalMaxPoolNode(std::string name, std::string in, std::string lengths)
      : Node<T>(std::move(name)), in_(std::move(in)), lengths_(std::move(lengths)) {}

  void forward(LayerGraph<T>& g, Mode) override {
    const Tensor<T>& x = g.tensor(in_);
    if (x.shape.size() != 3)
      shape_error<T>(this->name_, "input rank", x.shape, {0, 0, 0});
    const std::vector<int>& lens = g.lengths(lengths_);
    const std::size_t B = x.shape[0], L = x.shape[1], F = x.shape[2];
    Tensor<T>& y = g.make_output(this->name_, {B, F});
    argmax_.assign(B * F, 0);
    par::parallel_for(
        B,
        [&](std::size_t bi) {
          const std::size_t len =
              std::max<std::size_t>(1, static_cast<std::size_t>(lens[bi]));
          for (std::size_t f = 0; f < F; ++f) {
            std::size_t best = 0;
            T bv = x.v[(bi * L) * F + f];
            for (std::size_t t = 1; t < len; ++t) {
              const T v = x.v[(bi * L + t) * F + f];
              if (v > bv) bv = v, best = t;  // first argmax wins ties
            }
            y.v[bi * F + f] = bv;
            argmax_[bi * F + f] = best;
          }
        },
        1);
  }

  void backward(LayerGraph<T>& g) override {
    Tensor<T>& x = g.tensor(in_);
    const Tensor<T>& y = g.tensor(this->name_);
    const std::size_t B = x.shape[0], L = x.shape[1], F = x.shape[2];
    par::parallel_for(
        B,
        [&](std::size_t bi) {
          for (std::size_t f = 0; f < F; ++f)
            x.g[(bi * L + argmax_[bi * F + f]) * F + f] += y.g[bi * F + f];
        },
        1);
  }

 private:
  std::string in_, lengths_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class ConcatNode final : public Node<T> {
 public:
  ConcatNode(std::string name, std::vector<std::string> ins)
      : Node<T>(std::move(name)), ins_(std::move(ins)) {
    if (ins_.size() < 2)
      throw Error(ErrorCode::Config, "concat needs at least two inputs");
  }

  void forward(LayerGraph<T>& g, Mode) override {
    std::size_t width = 0;
    const Tensor<T>& first = g.tensor(ins_[0]);
    for (const auto& in : ins_) {
      const Tensor<T>& t = g.tensor(in);
      if (t.rows() != first.rows())
        shape_error<T>(this->name_, "input rows of " + in, t.shape,
                       first.shape);
      width += t.last_dim();
    }
    std::vector<std::size_t> oshape = first.shape;
    oshape.back() = width;
    Tensor<T>& y = g.make_output(this->name_, oshape);
    const std::size_t rows = first.rows();
    std::size_t off = 0;
    for (const auto& in : ins_) {
      const Tensor<T>& t = g.tensor(in);
      const std::size_t w = t.last_dim();
      par::parallel_for(
          rows,
          [&](std::size_t r) {
            std::copy(t.v.data() + r * w, t.v.data() + (r + 1) * w,
                      y.v.data() + r * width + off);
          },
          16);
      off += w;
    }
  }

  void backward(LayerGraph<T>& g) override {
    const Tensor<T>& y = g.tensor(this->name_);
    const std::size_t width = y.last_dim();
    const std::size_t rows = y.rows();
    std::size_t off = 0;
    for (const auto& in : ins_) {
      Tensor<T>& t = g.tensor(in);
      const std::size_t w = t.last_dim();
      par::parallel_for(
          rows,
          [&](std::size_t r) {
            for (std::size_t j = 0; j < w; ++j)
              t.g[r * w + j] += y.g[r * width + off + j];
          },
          16);
      off += w;
    }
  }

 private:
  std::vector<std::string> ins_;
};

template <typename T>
class MeanNode final : public Node<T> {
 public:
  MeanNode(std::string name, std::vector<std::string> ins)
      : Node<T>(std::move(name)), ins_(std::move(ins)) {
    if (ins_.empty())
      throw Error(ErrorCode::Config, "mean needs at least one input");
  }

  void forward(LayerGraph<T>& g, Mode) override {
    const Tensor<T>& first = g.tensor(ins_[0]);
    Tensor<T>& y = g.make_output(this->name_, first.shape);
    const T inv = T(1) / T(ins_.size());
    for (const auto& in : ins_) {
      const Tensor<T>& t = g.tensor(in);
      if (t.shape != first.shape)
        shape_error<T>(this->name_, "input " + in, t.shape, first.shape);
      for (std::size_t i = 0; i < t.v.size(); ++i) y.v[i] += t.v[i] * inv;
    }
  }

  void backward(LayerGraph<T>& g) override {
    const Tensor<T>& y = g.tensor(this->name_);
    const T inv = T(1) / T(ins_.size());
    for (const auto& in : ins_) {
      Tensor<T>& t = g.tensor(in);
      for (std::size_t i = 0; i < t.g.size(); ++i) t.g[i] += y.g[i] * inv;
    }
  }

 private:
  std::vector<std::string> ins_;
};

}  // namespace

// ---------------------------------------------------------------------------
// LayerGraph
// ---------------------------------------------------------------------------

template <typename T>
LayerGraph<T>::LayerGraph(uint64_t seed) : rng_(seed), seed_(seed) {}

template <typename T>
void LayerGraph<T>::require_new_tensor(const std::string& name) const {
  if (tensors_.count(name) || ids_.count(name))
    throw Error(ErrorCode::Config, "duplicate tensor name '" + name + "'");
}

template <typename T>
void LayerGraph<T>::add_node(std::unique_ptr<Node<T>> node) {
  nodes_.push_back(std::move(node));
  forward_ran_ = false;
}

template <typename T>
void LayerGraph<T>::set_input(const std::string& name, Tensor<T> t) {
  tensors_[name] = std::move(t);
}

template <typename T>
void LayerGraph<T>::set_ids(const std::string& name, IdMatrix ids) {
  ids_[name] = std::move(ids);
}

template <typename T>
void LayerGraph<T>::set_lengths(const std::string& name,
                                std::vector<int> lens) {
  lengths_[name] = std::move(lens);
}

template <typename T>
Tensor<T>& LayerGraph<T>::make_output(const std::string& name,
                                      std::vector<std::size_t> shape) {
  Tensor<T>& t = tensors_[name];
  t.resize(std::move(shape));
  return t;
}

template <typename T>
Tensor<T>& LayerGraph<T>::tensor(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw Error(ErrorCode::Config, "no tensor named '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& LayerGraph<T>::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw Error(ErrorCode::Config, "no tensor named '" + name + "'");
  return it->second;
}

template <typename T>
bool LayerGraph<T>::has_tensor(const std::string& name) const {
  return tensors_.count(name) > 0;
}

template <typename T>
const IdMatrix& LayerGraph<T>::ids(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end())
    throw Error(ErrorCode::Config, "no id input named '" + name + "'");
  return it->second;
}

template <typename T>
const std::vector<int>& LayerGraph<T>::lengths(const std::string& name) const {
  auto it = lengths_.find(name);
  if (it == lengths_.end())
    throw Error(ErrorCode::Config, "no lengths input named '" + name + "'");
  return it->second;
}

template <typename T>
Param<T>& LayerGraph<T>::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw Error(ErrorCode::Config, "no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
const Param<T>& LayerGraph<T>::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw Error(ErrorCode::Config, "no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
void LayerGraph<T>::freeze(const std::string& prefix, bool frozen) {
  for (auto& [name, p] : params_)
    if (name.rfind(prefix, 0) == 0) p.frozen = frozen;
}

template <typename T>
Tensor<T>& LayerGraph<T>::add_param(const std::string& name,
                                    std::vector<std::size_t> shape) {
  if (params_.count(name))
    throw Error(ErrorCode::Config, "duplicate parameter '" + name + "'");
  Param<T>& p = params_[name];
  p.t.resize(std::move(shape));
  return p.t;
}

template <typename T>
void LayerGraph<T>::glorot_init(Tensor<T>& t, std::size_t fan_in,
                                std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (T& v : t.v) v = static_cast<T>(u(rng_));
}

template <typename T>
void LayerGraph<T>::zero_grads() {
  for (auto& [_, t] : tensors_) t.zero_grad();
  for (auto& [_, p] : params_) p.t.zero_grad();
}

template <typename T>
void LayerGraph<T>::forward(Mode mode) {
  zero_grads();
  for (auto& n : nodes_) n->forward(*this, mode);
  forward_ran_ = (mode == Mode::Train);
}

template <typename T>
void LayerGraph<T>::backward() {
  if (!forward_ran_)
    throw Error(ErrorCode::NoForwardState,
                "backward requires a train-mode forward pass");
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
    (*it)->backward(*this);
}

// Builders ------------------------------------------------------------------

template <typename T>
std::string LayerGraph<T>::embedding(const std::string& name,
                                     const std::string& ids,
                                     const std::string& bits,
                                     std::size_t vocab, std::size_t dim) {
  require_new_tensor(name);
  add_node(std::make_unique<EmbeddingNode<T>>(*this, name, ids, bits, vocab,
                                              dim));
  return name;
}

template <typename T>
std::string LayerGraph<T>::dropout(const std::string& name,
                                   const std::string& in, T rate) {
  require_new_tensor(name);
  add_node(std::make_unique<DropoutNode<T>>(name, in, rate));
  return name;
}

template <typename T>
std::string LayerGraph<T>::lstm(const std::string& name, const std::string& in,
                                const std::string& lengths, std::size_t in_dim,
                                std::size_t hidden, bool bidirectional) {
  require_new_tensor(name);
  add_node(std::make_unique<LstmNode<T>>(*this, name, in, lengths, in_dim,
                                         hidden, bidirectional));
  return name;
}

template <typename T>
std::string LayerGraph<T>::conv1d(const std::string& name,
                                  const std::string& in,
                                  const std::string& lengths,
                                  std::size_t in_channels, std::size_t filters,
                                  std::size_t kernel, Act act) {
  require_new_tensor(name);
  add_node(std::make_unique<Conv1dNode<T>>(*this, name, in, lengths,
                                           in_channels, filters, kernel, act));
  return name;
}

template <typename T>
std::string LayerGraph<T>::global_max_pool(const std::string& name,
                                           const std::string& in,
                                           const std::string& lengths) {
  require_new_tensor(name);
  add_node(std::make_unique<GlobalMaxPoolNode<T>>(name, in, lengths));
  return name;
}

template <typename T>
std::string LayerGraph<T>::dense(const std::string& name,
                                 const std::string& in, std::size_t in_dim,
                                 std::size_t units, Act act) {
  require_new_tensor(name);
  add_node(std::make_unique<DenseNode<T>>(*this, name, in, in_dim, units, act));
  return name;
}

template <typename T>
std::string LayerGraph<T>::concat(const std::string& name,
                                  const std::vector<std::string>& ins) {
  require_new_tensor(name);
  add_node(std::make_unique<ConcatNode<T>>(name, ins));
  return name;
}

template <typename T>
std::string LayerGraph<T>::mean(const std::string& name,
                                const std::vector<std::string>& ins) {
  require_new_tensor(name);
  add_node(std::make_unique<MeanNode<T>>(name, ins));
  return name;
}

template <typename T>
std::string LayerGraph<T>::softmax(const std::string& name,
                                   const std::string& in) {
  require_new_tensor(name);
  add_node(std::make_unique<SoftmaxNode<T>>(name, in));
  return name;
}

// Losses ----------------------------------------------------------------------

template <typename T>
T cross_entropy_row(const T* probs, std::size_t k, int gold) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= k)
    throw Error(ErrorCode::Config, "gold label out of range");
  const T lo = T(1e-7), hi = T(1) - T(1e-7);
  const T p = std::min(hi, std::max(lo, probs[gold]));
  return -std::log(p);
}

template <typename T>
T multi_head_loss(LayerGraph<T>& g, const std::vector<std::string>& heads,
                  const std::vector<int>& gold, bool seed_grads) {
  if (heads.empty()) throw Error(ErrorCode::EmptyInput, "no heads");
  T loss = 0;
  for (const auto& head : heads) {
    Tensor<T>& h = g.tensor(head);
    const std::size_t k = h.last_dim();
    const std::size_t rows = h.rows();
    if (rows != gold.size())
      throw Error(ErrorCode::ShapeMismatch,
                  "head '" + head + "' rows != labels");
    // Distribution check: 1e-6 in the 64-bit test configuration, looser for
    // float where softmax row sums carry more rounding.
    const T tol = std::is_same_v<T, float> ? T(1e-4) : T(1e-6);
    for (std::size_t r = 0; r < rows; ++r) {
      T sum = 0;
      for (std::size_t j = 0; j < k; ++j) sum += h.v[r * k + j];
      if (std::abs(sum - T(1)) > tol)
        throw Error(ErrorCode::NotDistribution,
                    "head '" + head + "' row " + std::to_string(r) +
                        " sums to " + std::to_string(static_cast<double>(sum)));
      loss += cross_entropy_row(h.v.data() + r * k, k, gold[r]) / T(rows);
      if (seed_grads) {
        const T lo = T(1e-7), hi = T(1) - T(1e-7);
        const T p = h.v[r * k + gold[r]];
        if (p > lo && p < hi)
          h.g[r * k + gold[r]] += -T(1) / (p * T(rows));
      }
    }
  }
  return loss;
}

// Adam ------------------------------------------------------------------------

template <typename T>
void adam_update(std::vector<T>& values, const std::vector<T>& grads,
                 AdamSlots<T>& slots, const AdamConfig<T>& cfg, int64_t t,
                 const std::string& what, Exec exec) {
  if (values.size() != grads.size())
    throw Error(ErrorCode::ShapeMismatch, "adam: grad size mismatch for " + what);
  for (const T gv : grads)
    if (!std::isfinite(static_cast<double>(gv)))
      throw Error(ErrorCode::NonFiniteGrad, "non-finite gradient in " + what);
  if (slots.m.size() != values.size()) {
    slots.m.assign(values.size(), T(0));
    slots.v.assign(values.size(), T(0));
  }
  const T eff = cfg.lr / (T(1) + cfg.decay * T(t));
  const int64_t ta = t + 1;  // Adam's 1-based step for bias correction
  const T c1 = T(1) - std::pow(cfg.beta1, T(ta));
  const T c2 = T(1) - std::pow(cfg.beta2, T(ta));
  par::parallel_for(
      values.size(), exec,
      [&](std::size_t i) {
        slots.m[i] = cfg.beta1 * slots.m[i] + (T(1) - cfg.beta1) * grads[i];
        slots.v[i] =
            cfg.beta2 * slots.v[i] + (T(1) - cfg.beta2) * grads[i] * grads[i];
        const T mhat = slots.m[i] / c1;
        const T vhat = slots.v[i] / c2;
        values[i] -= eff * mhat / (std::sqrt(vhat) + cfg.eps);
      },
      256);
}

template <typename T>
void Adam<T>::step(LayerGraph<T>& g) {
  for (auto& [name, p] : g.params()) {
    if (p.frozen) continue;
    adam_update(p.t.v, p.t.g, slots_[name], cfg_, t_, name);
  }
  ++t_;
}

// Gradient check ----------------------------------------------------------------

template <typename T>
double gradient_check(LayerGraph<T>& g,
                      const std::function<T(LayerGraph<T>&, bool)>& loss,
                      T eps, uint64_t seed) {
  g.reseed(seed);
  loss(g, true);
  g.backward();
  std::map<std::string, std::vector<T>> analytic;
  for (auto& [name, p] : g.params()) analytic[name] = p.t.g;

  double worst = 0;
  for (auto& [name, p] : g.params()) {
    for (std::size_t i = 0; i < p.t.v.size(); ++i) {
      const T keep = p.t.v[i];
      p.t.v[i] = keep + eps;
      g.reseed(seed);
      const double lp = static_cast<double>(loss(g, false));
      p.t.v[i] = keep - eps;
      g.reseed(seed);
      const double lm = static_cast<double>(loss(g, false));
      p.t.v[i] = keep;
      const double numeric = (lp - lm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[name][i]);
      const double rel = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  // Restore analytic gradients for callers that inspect them.
  g.reseed(seed);
  loss(g, true);
  g.backward();
  return worst;
}

// Checkpoints ---------------------------------------------------------------------

template <typename T>
void save_checkpoint(const LayerGraph<T>& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write checkpoint " + path);
  f.write("EMCK", 4);
  io::write_u32(f, 1);  // format version
  io::write_u32(f, static_cast<uint32_t>(g.params().size()));
  for (const auto& [name, p] : g.params()) {
    io::write_string(f, name);
    io::write_u8(f, static_cast<uint8_t>(p.t.shape.size()));
    for (std::size_t d : p.t.shape) io::write_u64(f, d);
    for (const T v : p.t.v) io::write_f64(f, static_cast<double>(v));
  }
}

template <typename T>
void load_checkpoint(LayerGraph<T>& g, const std::string& path,
                     const std::string& prefix) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot read checkpoint " + path);
  io::expect_magic(f, "EMCK");
  const uint32_t version = io::read_u32(f);
  if (version != 1)
    throw Error(ErrorCode::Format,
                "unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = io::read_u32(f);
  std::vector<std::string> problems;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string stored = io::read_string(f);
    const uint8_t ndim = io::read_u8(f);
    std::vector<std::size_t> shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = io::read_u64(f);
      numel *= d;
    }
    std::vector<double> data(numel);
    for (auto& v : data) v = io::read_f64(f);

    const std::string name = prefix + stored;
    auto it = g.params().find(name);
    if (it == g.params().end()) {
      problems.push_back("missing parameter '" + name + "'");
      continue;
    }
    if (it->second.t.shape != shape) {
      problems.push_back("parameter '" + name + "' shape " +
                         shape_str(it->second.t.shape) + " != stored " +
                         shape_str(shape));
      continue;
    }
    for (std::size_t k = 0; k < numel; ++k)
      it->second.t.v[k] = static_cast<T>(data[k]);
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint '" + path + "' does not fit the graph:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorCode::ShapeMismatch, msg);
  }
}

// Explicit instantiations -----------------------------------------------------

template class LayerGraph<float>;
template class LayerGraph<double>;
template float cross_entropy_row<float>(const float*, std::size_t, int);
template double cross_entropy_row<double>(const double*, std::size_t, int);
template float multi_head_loss<float>(LayerGraph<float>&,
                                      const std::vector<std::string>&,
                                      const std::vector<int>&, bool);
template double multi_head_loss<double>(LayerGraph<double>&,
                                        const std::vector<std::string>&,
                                        const std::vector<int>&, bool);
template void adam_update<float>(std::vector<float>&, const std::vector<float>&,
                                 AdamSlots<float>&, const AdamConfig<float>&,
                                 int64_t, const std::string&, Exec);
template void adam_update<double>(std::vector<double>&,
                                  const std::vector<double>&,
                                  AdamSlots<double>&, const AdamConfig<double>&,
                                  int64_t, const std::string&, Exec);
template class Adam<float>;
template class Adam<double>;
template double gradient_check<float>(
    LayerGraph<float>&, const std::function<float(LayerGraph<float>&, bool)>&,
    float, uint64_t);
template double gradient_check<double>(
    LayerGraph<double>&,
    const std::function<double(LayerGraph<double>&, bool)>&, double, uint64_t);
template void save_checkpoint<float>(const LayerGraph<float>&,
                                     const std::string&);
template void save_checkpoint<double>(const LayerGraph<double>&,
                                      const std::string&);
template void load_checkpoint<float>(LayerGraph<float>&, const std::string&,
                                     const std::string&);
template void load_checkpoint<double>(LayerGraph<double>&, const std::string&,
                                      const std::string&);

}  // namespace emo::ad
