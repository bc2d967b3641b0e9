#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tmps/rng.hpp"
#include "tmps/util.hpp"

namespace tmps {

// Row-major dense matrix, double precision throughout.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
};

struct Layer {
  Mat w;                  // out x in
  std::vector<double> b;  // out
};

// Fully connected embedding network: dims = [input, hidden..., embed].
// Hidden layers use tanh; the final layer is linear so embeddings are
// unbounded.
struct EmbeddingModel {
  std::vector<int> dims;
  std::vector<Layer> layers;  // dims.size() - 1 entries

  int input_dim() const { return dims.front(); }
  int embed_dim() const { return dims.back(); }
};

// Linear classifier on top of the embedding: logits = w * e + b.
struct ClassifierHead {
  Mat w;                  // classes x embed
  std::vector<double> b;  // classes

  int num_classes() const { return w.rows; }
  int embed_dim() const { return w.cols; }
};

struct ModelGrad {
  std::vector<Layer> layers;
};

struct HeadGrad {
  Mat w;
  std::vector<double> b;
};

// Gradient of a scalar loss with respect to every trainable parameter.
// Mirrors the shapes of EmbeddingModel and ClassifierHead.
struct Gradients {
  ModelGrad model;
  HeadGrad head;
};

namespace detail {

// Glorot-uniform fill: entries uniform on +-sqrt(6 / (fan_in + fan_out)),
// drawn row-major so the consumption order is part of the format.
inline void glorot_fill(Mat& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / (m.rows + m.cols));
  for (double& v : m.a) v = rng.uniform_range(-limit, limit);
}

}  // namespace detail

// Draw order: each layer's weights in layer order (row-major within a
// layer); biases start at zero and consume no draws.
inline EmbeddingModel init_embedding(const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("init_embedding: need input and output dims");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("init_embedding: dims must be positive");
  EmbeddingModel m;
  m.dims = dims;
  m.layers.resize(dims.size() - 1);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    m.layers[l].w = Mat(dims[l + 1], dims[l]);
    m.layers[l].b.assign(dims[l + 1], 0.0);
    detail::glorot_fill(m.layers[l].w, rng);
  }
  return m;
}

inline ClassifierHead init_head(int embed_dim, int num_classes, Rng& rng) {
  if (embed_dim < 1 || num_classes < 2)
    throw std::invalid_argument("init_head: need embed_dim >= 1 and num_classes >= 2");
  ClassifierHead h;
  h.w = Mat(num_classes, embed_dim);
  h.b.assign(num_classes, 0.0);
  detail::glorot_fill(h.w, rng);
  return h;
}

inline Gradients make_gradients(const EmbeddingModel& m, const ClassifierHead& h) {
  Gradients g;
  g.model.layers.resize(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    g.model.layers[l].w = Mat(m.layers[l].w.rows, m.layers[l].w.cols);
    g.model.layers[l].b.assign(m.layers[l].b.size(), 0.0);
  }
  g.head.w = Mat(h.w.rows, h.w.cols);
  g.head.b.assign(h.b.size(), 0.0);
  return g;
}

// Per-layer activations of one forward pass: act[0] is the input, act[L] the
// embedding. Kept so backward() can reuse them.
struct ForwardTrace {
  std::vector<std::vector<double>> act;

  const std::vector<double>& embedding() const { return act.back(); }
};

inline ForwardTrace forward_trace(const EmbeddingModel& m, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != m.input_dim())
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                " dims, model expects " + std::to_string(m.input_dim()));
  ForwardTrace t;
  t.act.resize(m.layers.size() + 1);
  t.act[0] = x;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const Layer& layer = m.layers[l];
    const std::vector<double>& in = t.act[l];
    std::vector<double>& out = t.act[l + 1];
    out.assign(layer.b.begin(), layer.b.end());
    for (int r = 0; r < layer.w.rows; ++r) {
      double acc = out[r];
      const double* wr = &layer.w.a[static_cast<std::size_t>(r) * layer.w.cols];
      for (int c = 0; c < layer.w.cols; ++c) acc += wr[c] * in[c];
      out[r] = acc;
    }
    if (l + 1 < m.layers.size())  // hidden layers only
      for (double& v : out) v = std::tanh(v);
  }
  return t;
}

inline std::vector<double> forward(const EmbeddingModel& m, const std::vector<double>& x) {
  return forward_trace(m, x).embedding();
}

namespace detail {

// Backpropagates g_embed (dL/d embedding) through a recorded trace.
// Accumulates weight * dL/dparam into grads; if grad_input is non-null,
// writes weight * dL/dx there (adding to existing contents).
inline void backward_accumulate(const EmbeddingModel& m, const ForwardTrace& t,
                                const std::vector<double>& g_embed, double weight,
                                ModelGrad& grads, std::vector<double>* grad_input) {
  std::vector<double> delta = g_embed;  // dL/dz at the current layer
  std::vector<double> next;
  for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
    const Layer& layer = m.layers[l];
    const std::vector<double>& in = t.act[l];
    Layer& g = grads.layers[l];
    for (int r = 0; r < layer.w.rows; ++r) {
      const double d = weight * delta[r];
      double* gr = &g.w.a[static_cast<std::size_t>(r) * g.w.cols];
      for (int c = 0; c < layer.w.cols; ++c) gr[c] += d * in[c];
      g.b[r] += d;
    }
    // dL/d(input of layer l); for hidden inputs fold in the tanh derivative.
    next.assign(in.size(), 0.0);
    for (int r = 0; r < layer.w.rows; ++r) {
      const double d = delta[r];
      const double* wr = &layer.w.a[static_cast<std::size_t>(r) * layer.w.cols];
      for (int c = 0; c < layer.w.cols; ++c) next[c] += wr[c] * d;
    }
    if (l > 0)
      for (std::size_t i = 0; i < next.size(); ++i) next[i] *= 1.0 - in[i] * in[i];
    delta.swap(next);
  }
  if (grad_input)
    for (std::size_t i = 0; i < delta.size(); ++i) (*grad_input)[i] += weight * delta[i];
}

}  // namespace detail

// Gradient of a scalar loss with respect to the embedding parameters and the
// input, given dL/d(embedding). Returns (parameter grads, dL/dx).
inline std::pair<ModelGrad, std::vector<double>> backward(const EmbeddingModel& m,
                                                          const std::vector<double>& x,
                                                          const std::vector<double>& g_embed) {
  if (static_cast<int>(g_embed.size()) != m.embed_dim())
    throw std::invalid_argument("backward: gradient has " + std::to_string(g_embed.size()) +
                                " dims, embedding has " + std::to_string(m.embed_dim()));
  const ForwardTrace t = forward_trace(m, x);
  Gradients g;
  g.model.layers.resize(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    g.model.layers[l].w = Mat(m.layers[l].w.rows, m.layers[l].w.cols);
    g.model.layers[l].b.assign(m.layers[l].b.size(), 0.0);
  }
  std::vector<double> gx(x.size(), 0.0);
  detail::backward_accumulate(m, t, g_embed, 1.0, g.model, &gx);
  return {std::move(g.model), std::move(gx)};
}

// Numerically stable softmax; the result sums to 1 exactly up to rounding.
inline std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

inline std::vector<double> head_logits(const ClassifierHead& h, const std::vector<double>& e) {
  if (static_cast<int>(e.size()) != h.embed_dim())
    throw std::invalid_argument("head_logits: embedding has " + std::to_string(e.size()) +
                                " dims, head expects " + std::to_string(h.embed_dim()));
  std::vector<double> logits(h.b);
  for (int r = 0; r < h.w.rows; ++r) {
    double acc = logits[r];
    const double* wr = &h.w.a[static_cast<std::size_t>(r) * h.w.cols];
    for (int c = 0; c < h.w.cols; ++c) acc += wr[c] * e[c];
    logits[r] = acc;
  }
  return logits;
}

// Class probabilities for one input.
inline std::vector<double> classify(const EmbeddingModel& m, const ClassifierHead& h,
                                    const std::vector<double>& x) {
  return softmax(head_logits(h, forward(m, x)));
}

// Cross-entropy on head logits. Returns the loss and writes dL/dlogits
// (softmax minus one-hot) to g_logits. Computed via log-sum-exp so a
// confident wrong prediction cannot overflow.
inline double cross_entropy_logits(const std::vector<double>& logits, int label,
                                   std::vector<double>& g_logits) {
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " outside [0, " + std::to_string(logits.size()) + ")");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  g_logits = softmax(logits);
  g_logits[label] -= 1.0;
  return lse - logits[label];
}

// One plain SGD update: p -= lr * g for every parameter. lr = 0 is legal and
// leaves everything unchanged; negative lr is rejected. Non-finite gradient
// entries are an error rather than silently corrupting the model.
inline void sgd_step(EmbeddingModel& m, ClassifierHead& h, const Gradients& g, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step: learning rate must be >= 0");
  if (g.model.layers.size() != m.layers.size())
    throw std::invalid_argument("sgd_step: gradient/model layer count mismatch");
  auto apply = [lr](std::vector<double>& p, const std::vector<double>& gv, const char* what) {
    if (p.size() != gv.size())
      throw std::invalid_argument(std::string("sgd_step: shape mismatch in ") + what);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(gv[i]))
        throw std::runtime_error(std::string("sgd_step: non-finite gradient in ") + what);
      p[i] -= lr * gv[i];
    }
  };
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    apply(m.layers[l].w.a, g.model.layers[l].w.a, "layer weights");
    apply(m.layers[l].b, g.model.layers[l].b, "layer biases");
  }
  apply(h.w.a, g.head.w.a, "head weights");
  apply(h.b, g.head.b, "head biases");
}

// Head-only variant used when the embedding is frozen.
inline void sgd_step_head(ClassifierHead& h, const HeadGrad& g, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("sgd_step_head: learning rate must be >= 0");
  auto apply = [lr](std::vector<double>& p, const std::vector<double>& gv) {
    if (p.size() != gv.size()) throw std::invalid_argument("sgd_step_head: shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(gv[i])) throw std::runtime_error("sgd_step_head: non-finite gradient");
      p[i] -= lr * gv[i];
    }
  };
  apply(h.w.a, g.w.a);
  apply(h.b, g.b);
}

// --- checkpoint format ----------------------------------------------------
//
//   tmps-ckpt v1\n
//   dims=<d0>,<d1>,...\n
//   classes=<c>\n
//   <raw little-endian float64 parameters>
//
// Parameter order: for each embedding layer, weights row-major then biases;
// then head weights row-major, then head biases. The byte payload length is
// fully determined by the header, and loads are rejected when it differs.

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline std::string checkpoint_bytes(const EmbeddingModel& m, const ClassifierHead& h) {
  std::ostringstream out;
  out << "tmps-ckpt v1\ndims=";
  for (std::size_t i = 0; i < m.dims.size(); ++i) out << (i ? "," : "") << m.dims[i];
  out << "\nclasses=" << h.num_classes() << "\n";
  auto put = [&out](const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  for (const Layer& l : m.layers) {
    put(l.w.a);
    put(l.b);
  }
  put(h.w.a);
  put(h.b);
  return out.str();
}

inline void save_checkpoint(const std::string& path, const EmbeddingModel& m,
                            const ClassifierHead& h) {
  write_text_file(path, checkpoint_bytes(m, h));
}

inline std::pair<EmbeddingModel, ClassifierHead> checkpoint_from_bytes(const std::string& bytes,
                                                                       const std::string& origin) {
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || line != "tmps-ckpt v1")
    throw std::runtime_error(origin + ": not a tmps-ckpt v1 file");
  if (!std::getline(in, line) || line.rfind("dims=", 0) != 0)
    throw std::runtime_error(origin + ": missing dims line");
  std::vector<int> dims;
  {
    std::istringstream ds(line.substr(5));
    std::string tok;
    while (std::getline(ds, tok, ',')) {
      try {
        dims.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw std::runtime_error(origin + ": bad dims entry '" + tok + "'");
      }
    }
  }
  if (dims.size() < 2) throw std::runtime_error(origin + ": dims line needs >= 2 entries");
  for (int d : dims)
    if (d < 1) throw std::runtime_error(origin + ": non-positive dim");
  if (!std::getline(in, line) || line.rfind("classes=", 0) != 0)
    throw std::runtime_error(origin + ": missing classes line");
  int classes = 0;
  try {
    classes = std::stoi(line.substr(8));
  } catch (const std::exception&) {
    throw std::runtime_error(origin + ": bad classes value");
  }
  if (classes < 2) throw std::runtime_error(origin + ": classes must be >= 2");

  std::size_t expected = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    expected += static_cast<std::size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
  expected += static_cast<std::size_t>(classes) * dims.back() + classes;

  const std::size_t header_len = static_cast<std::size_t>(in.tellg());
  const std::size_t payload = bytes.size() - header_len;
  if (payload != expected * sizeof(double))
    throw std::runtime_error(origin + ": parameter payload is " + std::to_string(payload) +
                             " bytes, header implies " + std::to_string(expected * sizeof(double)));

  const char* p = bytes.data() + header_len;
  auto take = [&p](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    std::memcpy(v.data(), p, n * sizeof(double));
    p += n * sizeof(double);
    for (double x : v)
      if (!std::isfinite(x)) throw std::runtime_error("checkpoint holds non-finite parameter");
  };
  EmbeddingModel m;
  m.dims = dims;
  m.layers.resize(dims.size() - 1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    m.layers[l].w = Mat(dims[l + 1], dims[l]);
    take(m.layers[l].w.a, m.layers[l].w.a.size());
    take(m.layers[l].b, static_cast<std::size_t>(dims[l + 1]));
  }
  ClassifierHead h;
  h.w = Mat(classes, dims.back());
  take(h.w.a, h.w.a.size());
  take(h.b, static_cast<std::size_t>(classes));
  return {std::move(m), std::move(h)};
}

inline std::pair<EmbeddingModel, ClassifierHead> load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes(read_text_file(path), path);
}

}  // namespace tmps
