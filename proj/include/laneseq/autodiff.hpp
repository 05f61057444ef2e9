#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace laneseq::ad {

// Dense row-major 2D matrix of doubles. Vectors are 1xN.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<size_t>(r) * cols + c];
  }
  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const {
    return data.data() + static_cast<size_t>(r) * cols;
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

// C += A * B and friends; reduction over k runs in ascending order so the
// training and inference paths accumulate identically.
void matmul_acc(const Mat& a, const Mat& b, Mat& c);
void matmul_nt_acc(const Mat& a, const Mat& b, Mat& c);  // C += A * B^T

// Named parameter tensor with its gradient buffer.
class Tensor {
 public:
  Tensor(std::string name, int rows, int cols)
      : name_(std::move(name)), value_(rows, cols), grad_(rows, cols) {}

  const std::string& name() const { return name_; }
  Mat& value() { return value_; }
  const Mat& value() const { return value_; }
  Mat& grad() { return grad_; }
  const Mat& grad() const { return grad_; }

 private:
  std::string name_;
  Mat value_;
  Mat grad_;
};

// Insertion-ordered registry of parameters. Tensor addresses are stable.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, int rows, int cols);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  size_t count() const { return items_.size(); }
  Tensor& at(size_t i) { return *items_[i]; }
  const Tensor& at(size_t i) const { return *items_[i]; }

  size_t total_elements() const;
  void zero_grads();

  // Flattens values/grads in insertion order (optimizer + checkpoint layout).
  std::vector<double> flat_values() const;
  void set_flat_values(std::span<const double> flat);

 private:
  std::vector<std::unique_ptr<Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

class Graph;

// Handle into a Graph's tape. The generation tag detects use after release.
struct Value {
  int id = -1;
  int gen = -1;
};

// Reverse-mode tape. One graph per forward computation; backward() walks the
// tape once, release() frees it, and any use afterwards throws.
class Graph {
 public:
  // record_grads = false gives a forward-only graph (backward() throws).
  explicit Graph(bool record_grads = true);

  Value constant(Mat m);
  Value param(const Tensor& t);

  Value add(Value a, Value b);
  Value add_rowvec(Value a, Value bias);  // bias is 1xC, broadcast over rows
  Value scale(Value a, double s);
  Value matmul(Value a, Value b);
  Value matmul_nt(Value a, Value b);  // a * b^T
  Value transpose(Value a);
  Value reshape(Value a, int rows, int cols);
  Value slice_cols(Value a, int c0, int c1);
  Value concat_cols(std::span<const Value> parts);
  Value gather_rows(Value table, std::vector<int> ids);
  Value layer_norm(Value x, Value gamma, Value beta, double eps = 1e-5);
  Value softmax_rows(Value x);
  Value gelu(Value x);
  Value relu(Value x);

  // Per-row weighted softmax cross-entropy against integer targets.
  // normalize: divide by the weight sum (mean over weighted positions);
  // otherwise the plain weighted sum. Returns a 1x1 scalar.
  Value weighted_cross_entropy(Value logits, std::vector<int> targets,
                               std::vector<double> weights, bool normalize);

  const Mat& value(Value v) const;
  void backward(Value scalar_loss);

  // After backward: gradient of the loss w.r.t. a parameter leaf, or nullptr
  // if the parameter never entered this graph.
  const Mat* param_grad(const Tensor& t) const;

  // Frees the tape. Any further use of this graph or its handles throws.
  void release();
  bool released() const { return released_; }

 private:
  struct Node {
    Mat val;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Graph&)> back;
    const Tensor* leaf = nullptr;
  };

  Value push(Node node);
  Node& node(Value v);
  const Node& node(Value v) const;
  void check(Value v) const;
  void check_alive() const;

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> leaf_ids_;
  bool record_ = true;
  bool released_ = false;
  bool backward_done_ = false;
  int gen_ = 0;
};

}  // namespace laneseq::ad
