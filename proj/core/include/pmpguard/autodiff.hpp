#pragma once

#include <cassert>
#include <cmath>
#include <vector>

namespace pmpguard::ad {

// Minimal scalar reverse-mode tape. Each node stores up to two parents with
// precomputed local partials; backward() is a single reverse sweep.
//
// Var is a (value, tape index) pair. Index -1 marks a constant: operations
// whose inputs are all constants allocate no node, so mixing doubles into
// Var arithmetic is free.
class Tape {
 public:
  struct Node {
    int a, b;
    double da, db;
  };

  int leaf(double) {
    nodes_.push_back({-1, -1, 0.0, 0.0});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push(int a, double da, int b, double db) {
    nodes_.push_back({a, b, da, db});
    return static_cast<int>(nodes_.size()) - 1;
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Adjoints of every node with respect to the node at `root`.
  std::vector<double> backward(int root) const {
    std::vector<double> grad(nodes_.size(), 0.0);
    assert(root >= 0 && root < static_cast<int>(nodes_.size()));
    grad[root] = 1.0;
    for (int i = root; i >= 0; --i) {
      double g = grad[i];
      if (g == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.a >= 0) grad[n.a] += n.da * g;
      if (n.b >= 0) grad[n.b] += n.db * g;
    }
    return grad;
  }

 private:
  std::vector<Node> nodes_;
};

inline thread_local Tape* g_tape = nullptr;

struct TapeScope {
  explicit TapeScope(Tape& t) : prev(g_tape) { g_tape = &t; }
  ~TapeScope() { g_tape = prev; }
  Tape* prev;
};

struct Var {
  double v = 0.0;
  int i = -1;

  Var() = default;
  Var(double x) : v(x) {}  // NOLINT: implicit constants are the point
  Var(double x, int idx) : v(x), i(idx) {}
};

inline Var leaf(double x) {
  assert(g_tape);
  return Var(x, g_tape->leaf(x));
}

inline Var node(double v, int a, double da, int b, double db) {
  if (a < 0 && b < 0) return Var(v);
  return Var(v, g_tape->push(a, da, b, db));
}

inline Var operator+(Var x, Var y) { return node(x.v + y.v, x.i, 1.0, y.i, 1.0); }
inline Var operator-(Var x, Var y) { return node(x.v - y.v, x.i, 1.0, y.i, -1.0); }
inline Var operator-(Var x) { return node(-x.v, x.i, -1.0, -1, 0.0); }
inline Var operator*(Var x, Var y) { return node(x.v * y.v, x.i, y.v, y.i, x.v); }
inline Var operator/(Var x, Var y) {
  double inv = 1.0 / y.v;
  return node(x.v * inv, x.i, inv, y.i, -x.v * inv * inv);
}
inline Var& operator+=(Var& x, Var y) { return x = x + y; }
inline Var& operator-=(Var& x, Var y) { return x = x - y; }
inline Var& operator*=(Var& x, Var y) { return x = x * y; }
inline Var& operator/=(Var& x, Var y) { return x = x / y; }

inline bool operator<(Var x, Var y) { return x.v < y.v; }
inline bool operator>(Var x, Var y) { return x.v > y.v; }

inline Var vexp(Var x) {
  double e = std::exp(x.v);
  return node(e, x.i, e, -1, 0.0);
}
inline Var vlog(Var x) { return node(std::log(x.v), x.i, 1.0 / x.v, -1, 0.0); }
inline Var vsqrt(Var x) {
  double s = std::sqrt(x.v);
  return node(s, x.i, 0.5 / s, -1, 0.0);
}
// max picks the first argument on ties; subgradient follows the pick.
inline Var vmax(Var x, Var y) {
  return x.v >= y.v ? node(x.v, x.i, 1.0, -1, 0.0) : node(y.v, y.i, 1.0, -1, 0.0);
}
inline Var relu(Var x) { return x.v > 0.0 ? node(x.v, x.i, 1.0, -1, 0.0) : Var(0.0); }

inline double value_of(Var x) { return x.v; }
inline double value_of(double x) { return x; }

// double shims so templated kernels instantiate cleanly at T = double.
inline double vexp(double x) { return std::exp(x); }
inline double vlog(double x) { return std::log(x); }
inline double vsqrt(double x) { return std::sqrt(x); }
inline double vmax(double x, double y) { return x >= y ? x : y; }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }

template <class T>
T vsigmoid(T x) {
  if (value_of(x) >= 0.0) {
    T e = vexp(-x);
    return T(1.0) / (T(1.0) + e);
  }
  T e = vexp(x);
  return e / (T(1.0) + e);
}

}  // namespace pmpguard::ad
