#ifndef EMO_AUTODIFF_HPP
#define EMO_AUTODIFF_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "emo/errors.hpp"
#include "emo/parallel.hpp"

// Reverse-mode differentiation over a static layer graph. The node
// inventory is exactly what the sentence classifiers need: embedding with a
// trigger bit, dropout, bi-LSTM, conv1d, global max-pool over time, dense,
// concat, mean, softmax. Forward runs nodes in insertion (topological)
// order, backward in reverse. Double precision is the deterministic test
// configuration; float is the training configuration.

namespace emo::ad {

enum class Mode { Train, Eval };
enum class Act { Linear, ReLU, Tanh, Sigmoid };

template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> v;  // values, row-major
  std::vector<T> g;  // gradient, same size

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) { resize(std::move(s)); }

  void resize(std::vector<std::size_t> s) {
    shape = std::move(s);
    v.assign(numel(), T(0));
    g.assign(v.size(), T(0));
  }
  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  std::size_t last_dim() const { return shape.empty() ? 0 : shape.back(); }
  std::size_t rows() const {
    return shape.empty() ? 0 : numel() / shape.back();
  }
  void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }
};

struct IdMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<int> v;
};

template <typename T>
struct Param {
  Tensor<T> t;
  bool frozen = false;
};

template <typename T>
class LayerGraph;

template <typename T>
class Node {
 public:
  virtual ~Node() = default;
  virtual void forward(LayerGraph<T>& g, Mode mode) = 0;
  virtual void backward(LayerGraph<T>& g) = 0;
  virtual std::vector<std::string> param_names() const { return {}; }
  const std::string& name() const { return name_; }

 protected:
  explicit Node(std::string name) : name_(std::move(name)) {}
  std::string name_;
};

template <typename T>
class LayerGraph {
 public:
  explicit LayerGraph(uint64_t seed);
  LayerGraph(LayerGraph&&) noexcept = default;
  LayerGraph& operator=(LayerGraph&&) noexcept = default;
  ~LayerGraph() = default;

  // --- inputs -----------------------------------------------------------
  void set_input(const std::string& name, Tensor<T> t);
  void set_ids(const std::string& name, IdMatrix ids);
  void set_lengths(const std::string& name, std::vector<int> lens);

  // --- node builders ------------------------------------------------------
  // Input widths are declared up front so parameters exist (and are seeded)
  // at build time; forward checks shapes against the declaration. Builders
  // return the output tensor name (same as the node name).

  // Output (B, L, dim+1): embedding row plus the trigger bit channel.
  std::string embedding(const std::string& name, const std::string& ids,
                        const std::string& bits, std::size_t vocab,
                        std::size_t dim);
  std::string dropout(const std::string& name, const std::string& in, T rate);
  // bidirectional: output (B, L, 2*hidden); otherwise (B, L, hidden).
  std::string lstm(const std::string& name, const std::string& in,
                   const std::string& lengths, std::size_t in_dim,
                   std::size_t hidden, bool bidirectional);
  std::string conv1d(const std::string& name, const std::string& in,
                     const std::string& lengths, std::size_t in_channels,
                     std::size_t filters, std::size_t kernel,
                     Act act = Act::ReLU);
  std::string global_max_pool(const std::string& name, const std::string& in,
                              const std::string& lengths);
  std::string dense(const std::string& name, const std::string& in,
                    std::size_t in_dim, std::size_t units,
                    Act act = Act::Linear);
  std::string concat(const std::string& name,
                     const std::vector<std::string>& ins);
  std::string mean(const std::string& name,
                   const std::vector<std::string>& ins);
  std::string softmax(const std::string& name, const std::string& in);

  // --- execution ----------------------------------------------------------
  void forward(Mode mode);
  // Requires a train-mode forward; consumes grads seeded into output
  // tensors and accumulates parameter gradients.
  void backward();
  void zero_grads();
  bool has_forward_state() const { return forward_ran_; }

  // --- access -------------------------------------------------------------
  Tensor<T>& tensor(const std::string& name);
  const Tensor<T>& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
  const IdMatrix& ids(const std::string& name) const;
  const std::vector<int>& lengths(const std::string& name) const;

  Param<T>& param(const std::string& name);
  const Param<T>& param(const std::string& name) const;
  const std::map<std::string, Param<T>>& params() const { return params_; }
  std::map<std::string, Param<T>>& params() { return params_; }
  void freeze(const std::string& prefix, bool frozen);

  // Parameter creation (used by nodes; exposed for tests).
  Tensor<T>& add_param(const std::string& name,
                       std::vector<std::size_t> shape);
  void glorot_init(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out);

  // Creates or reshapes a node's output tensor; values and grads zeroed.
  Tensor<T>& make_output(const std::string& name,
                         std::vector<std::size_t> shape);

  std::mt19937_64& rng() { return rng_; }
  void reseed(uint64_t seed) { rng_.seed(seed); }
  uint64_t seed() const { return seed_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  void add_node(std::unique_ptr<Node<T>> node);
  void require_new_tensor(const std::string& name) const;

  std::vector<std::unique_ptr<Node<T>>> nodes_;
  std::map<std::string, Tensor<T>> tensors_;
  std::map<std::string, IdMatrix> ids_;
  std::map<std::string, std::vector<int>> lengths_;
  std::map<std::string, Param<T>> params_;
  std::mt19937_64 rng_;
  uint64_t seed_ = 0;
  bool forward_ran_ = false;
};

// --- losses ---------------------------------------------------------------

// Categorical cross-entropy of one probability row against a gold index,
// clamped to [1e-7, 1-1e-7].
template <typename T>
T cross_entropy_row(const T* probs, std::size_t k, int gold);

// Sum over heads of batch-mean cross-entropy, equal weight per head. Every
// head must be a per-row distribution (rows sum to 1 within 1e-6). When
// seed_grads is set, dL/dp is accumulated into each head tensor's grad.
template <typename T>
T multi_head_loss(LayerGraph<T>& g, const std::vector<std::string>& heads,
                  const std::vector<int>& gold, bool seed_grads);

// --- optimizer --------------------------------------------------------------

template <typename T>
struct AdamConfig {
  T lr = T(5e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  T decay = T(5e-5);  // between-batch decay: lr_t = lr / (1 + decay*t)
};

// One slot pair (first/second moment) per parameter element.
template <typename T>
struct AdamSlots {
  std::vector<T> m, v;
};

// Reference single-tensor update; t is the number of completed steps (0 on
// the first call). Throws NonFiniteGrad naming `what` on a bad gradient.
template <typename T>
void adam_update(std::vector<T>& values, const std::vector<T>& grads,
                 AdamSlots<T>& slots, const AdamConfig<T>& cfg, int64_t t,
                 const std::string& what, Exec exec = default_exec());

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig<T> cfg) : cfg_(cfg) {}
  // Applies one update to every unfrozen parameter, then advances the step.
  void step(LayerGraph<T>& g);
  int64_t steps_done() const { return t_; }
  T effective_lr() const { return cfg_.lr / (1 + cfg_.decay * T(t_)); }
  const AdamConfig<T>& config() const { return cfg_; }

 private:
  AdamConfig<T> cfg_;
  int64_t t_ = 0;
  std::map<std::string, AdamSlots<T>> slots_;
};

// --- gradient checking ------------------------------------------------------

// loss(graph, seed_grads) must run forward(Mode::Train) and return the loss,
// seeding output grads when asked. Returns the worst relative error
// |a - n| / max(1, |a|, |n|) over every parameter element. The graph RNG is
// reseeded before every forward so dropout masks repeat.
template <typename T>
double gradient_check(LayerGraph<T>& g,
                      const std::function<T(LayerGraph<T>&, bool)>& loss,
                      T eps, uint64_t seed = 12345);

// --- checkpoints -------------------------------------------------------------

// Versioned container keyed by parameter name. Loading into a graph with
// mismatched shapes throws, listing every mismatch. `prefix` is prepended
// to stored names on load (for composing trained subgraphs).
template <typename T>
void save_checkpoint(const LayerGraph<T>& g, const std::string& path);
template <typename T>
void load_checkpoint(LayerGraph<T>& g, const std::string& path,
                     const std::string& prefix = "");

}  // namespace emo::ad

#endif
