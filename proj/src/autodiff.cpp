#include "laneseq/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace laneseq::ad {

void matmul_acc(const Mat& a, const Mat& b, Mat& c) {
  // C(r x n) += A(r x k) * B(k x n), k ascending per output element.
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

void matmul_nt_acc(const Mat& a, const Mat& b, Mat& c) {
  // C(r x n) += A(r x k) * B(n x k)^T.
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* brow = b.row(j);
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  }
}

namespace {

// C(k x n) += A(r x k)^T * B(r x n)
void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row(i);
    const double* brow = b.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      double* crow = c.row(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

}  // namespace

// --- ParameterStore ----------------------------------------------------------

Tensor& ParameterStore::create(const std::string& name, int rows, int cols) {
  if (index_.count(name))
    throw std::invalid_argument("ParameterStore: duplicate name " + name);
  index_[name] = items_.size();
  items_.push_back(std::make_unique<Tensor>(name, rows, cols));
  return *items_.back();
}

Tensor& ParameterStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("ParameterStore: unknown name " + name);
  return *items_[it->second];
}

const Tensor& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("ParameterStore: unknown name " + name);
  return *items_[it->second];
}

bool ParameterStore::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

size_t ParameterStore::total_elements() const {
  size_t n = 0;
  for (const auto& t : items_) n += t->value().size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& t : items_)
    std::fill(t->grad().data.begin(), t->grad().data.end(), 0.0);
}

std::vector<double> ParameterStore::flat_values() const {
  std::vector<double> out;
  out.reserve(total_elements());
  for (const auto& t : items_)
    out.insert(out.end(), t->value().data.begin(), t->value().data.end());
  return out;
}

void ParameterStore::set_flat_values(std::span<const double> flat) {
  if (flat.size() != total_elements())
    throw std::invalid_argument("ParameterStore: flat size mismatch");
  size_t pos = 0;
  for (auto& t : items_) {
    std::copy(flat.begin() + static_cast<long>(pos),
              flat.begin() + static_cast<long>(pos + t->value().size()),
              t->value().data.begin());
    pos += t->value().size();
  }
}

// --- Graph ---------------------------------------------------------------------

Graph::Graph(bool record_grads) : record_(record_grads) {}

void Graph::check_alive() const {
  if (released_) throw std::logic_error("Graph: reuse after release");
}

void Graph::check(Value v) const {
  check_alive();
  if (v.gen != gen_ || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw std::logic_error("Graph: stale or foreign value handle");
}

Value Graph::push(Node n) {
  check_alive();
  if (!record_) {
    n.back = nullptr;
    n.needs_grad = false;
  }
  nodes_.push_back(std::move(n));
  return Value{static_cast<int>(nodes_.size()) - 1, gen_};
}

Graph::Node& Graph::node(Value v) {
  check(v);
  return nodes_[static_cast<size_t>(v.id)];
}

const Graph::Node& Graph::node(Value v) const {
  check(v);
  return nodes_[static_cast<size_t>(v.id)];
}

const Mat& Graph::value(Value v) const { return node(v).val; }

void Graph::release() {
  nodes_.clear();
  leaf_ids_.clear();
  released_ = true;
  ++gen_;
}

Value Graph::constant(Mat m) {
  Node n;
  n.val = std::move(m);
  return push(std::move(n));
}

Value Graph::param(const Tensor& t) {
  check_alive();
  const auto it = leaf_ids_.find(&t);
  if (it != leaf_ids_.end()) return Value{it->second, gen_};
  Node n;
  n.val = t.value();
  n.needs_grad = record_;
  n.leaf = &t;
  const Value v = push(std::move(n));
  leaf_ids_[&t] = v.id;
  return v;
}

Value Graph::add(Value a, Value b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (!na.val.same_shape(nb.val))
    throw std::invalid_argument("add: shape mismatch");
  Node n;
  n.val = na.val;
  for (size_t i = 0; i < n.val.size(); ++i) n.val.data[i] += nb.val.data[i];
  n.needs_grad = na.needs_grad || nb.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ia = a.id, ib = b.id, io = out.id;
    placed.back = [ia, ib, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pa = g.nodes_[static_cast<size_t>(ia)];
      Node& pb = g.nodes_[static_cast<size_t>(ib)];
      if (pa.needs_grad)
        for (size_t i = 0; i < go.size(); ++i) pa.grad.data[i] += go.data[i];
      if (pb.needs_grad)
        for (size_t i = 0; i < go.size(); ++i) pb.grad.data[i] += go.data[i];
    };
  }
  return out;
}

Value Graph::add_rowvec(Value a, Value bias) {
  const Node& na = node(a);
  const Node& nb = node(bias);
  if (nb.val.rows != 1 || nb.val.cols != na.val.cols)
    throw std::invalid_argument("add_rowvec: bias must be 1 x cols");
  Node n;
  n.val = na.val;
  for (int r = 0; r < n.val.rows; ++r) {
    double* row = n.val.row(r);
    const double* b = nb.val.row(0);
    for (int c = 0; c < n.val.cols; ++c) row[c] += b[c];
  }
  n.needs_grad = na.needs_grad || nb.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ia = a.id, ib = bias.id, io = out.id;
    placed.back = [ia, ib, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pa = g.nodes_[static_cast<size_t>(ia)];
      Node& pb = g.nodes_[static_cast<size_t>(ib)];
      if (pa.needs_grad)
        for (size_t i = 0; i < go.size(); ++i) pa.grad.data[i] += go.data[i];
      if (pb.needs_grad)
        for (int r = 0; r < go.rows; ++r) {
          const double* row = go.row(r);
          double* b = pb.grad.row(0);
          for (int c = 0; c < go.cols; ++c) b[c] += row[c];
        }
    };
  }
  return out;
}

Value Graph::scale(Value a, double s) {
  const Node& na = node(a);
  Node n;
  n.val = na.val;
  for (double& x : n.val.data) x *= s;
  n.needs_grad = na.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ia = a.id, io = out.id;
    placed.back = [ia, io, s](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pa = g.nodes_[static_cast<size_t>(ia)];
      for (size_t i = 0; i < go.size(); ++i) pa.grad.data[i] += s * go.data[i];
    };
  }
  return out;
}

Value Graph::matmul(Value a, Value b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.val.cols != nb.val.rows)
    throw std::invalid_argument("matmul: inner dimension mismatch");
  Node n;
  n.val = Mat(na.val.rows, nb.val.cols);
  matmul_acc(na.val, nb.val, n.val);
  n.needs_grad = na.needs_grad || nb.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ia = a.id, ib = b.id, io = out.id;
    placed.back = [ia, ib, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pa = g.nodes_[static_cast<size_t>(ia)];
      Node& pb = g.nodes_[static_cast<size_t>(ib)];
      if (pa.needs_grad) matmul_nt_acc(go, pb.val, pa.grad);  // dA += G B^T
      if (pb.needs_grad) matmul_tn_acc(pa.val, go, pb.grad);  // dB += A^T G
    };
  }
  return out;
}

Value Graph::matmul_nt(Value a, Value b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.val.cols != nb.val.cols)
    throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Node n;
  n.val = Mat(na.val.rows, nb.val.rows);
  matmul_nt_acc(na.val, nb.val, n.val);
  n.needs_grad = na.needs_grad || nb.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ia = a.id, ib = b.id, io = out.id;
    placed.back = [ia, ib, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pa = g.nodes_[static_cast<size_t>(ia)];
      Node& pb = g.nodes_[static_cast<size_t>(ib)];
      if (pa.needs_grad) matmul_acc(go, pb.val, pa.grad);     // dA += G B
      if (pb.needs_grad) matmul_tn_acc(go, pa.val, pb.grad);  // dB += G^T A
    };
  }
  return out;
}

Value Graph::transpose(Value a) {
  const Node& na = node(a);
  Node n;
  n.val = Mat(na.val.cols, na.val.rows);
  for (int r = 0; r < na.val.rows; ++r)
    for (int c = 0; c < na.val.cols; ++c) n.val.at(c, r) = na.val.at(r, c);
  n.needs_grad = na.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ia = a.id, io = out.id;
    placed.back = [ia, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pa = g.nodes_[static_cast<size_t>(ia)];
      for (int r = 0; r < go.rows; ++r)
        for (int c = 0; c < go.cols; ++c) pa.grad.at(c, r) += go.at(r, c);
    };
  }
  return out;
}

Value Graph::reshape(Value a, int rows, int cols) {
  const Node& na = node(a);
  if (static_cast<size_t>(rows) * static_cast<size_t>(cols) != na.val.size())
    throw std::invalid_argument("reshape: element count mismatch");
  Node n;
  n.val = na.val;
  n.val.rows = rows;
  n.val.cols = cols;
  n.needs_grad = na.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ia = a.id, io = out.id;
    placed.back = [ia, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pa = g.nodes_[static_cast<size_t>(ia)];
      for (size_t i = 0; i < go.size(); ++i) pa.grad.data[i] += go.data[i];
    };
  }
  return out;
}

Value Graph::slice_cols(Value a, int c0, int c1) {
  const Node& na = node(a);
  if (c0 < 0 || c1 > na.val.cols || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range");
  Node n;
  n.val = Mat(na.val.rows, c1 - c0);
  for (int r = 0; r < na.val.rows; ++r)
    for (int c = c0; c < c1; ++c) n.val.at(r, c - c0) = na.val.at(r, c);
  n.needs_grad = na.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ia = a.id, io = out.id;
    placed.back = [ia, io, c0](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pa = g.nodes_[static_cast<size_t>(ia)];
      for (int r = 0; r < go.rows; ++r)
        for (int c = 0; c < go.cols; ++c) pa.grad.at(r, c0 + c) += go.at(r, c);
    };
  }
  return out;
}

Value Graph::concat_cols(std::span<const Value> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  int cols = 0;
  const int rows = node(parts[0]).val.rows;
  bool needs = false;
  for (const Value& p : parts) {
    const Node& np = node(p);
    if (np.val.rows != rows)
      throw std::invalid_argument("concat_cols: row mismatch");
    cols += np.val.cols;
    needs = needs || np.needs_grad;
  }
  Node n;
  n.val = Mat(rows, cols);
  int off = 0;
  for (const Value& p : parts) {
    const Mat& m = node(p).val;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < m.cols; ++c) n.val.at(r, off + c) = m.at(r, c);
    off += m.cols;
  }
  n.needs_grad = needs;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const Value& p : parts) ids.push_back(p.id);
    const int io = out.id;
    placed.back = [ids, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      int off2 = 0;
      for (int id : ids) {
        Node& pa = g.nodes_[static_cast<size_t>(id)];
        if (pa.needs_grad)
          for (int r = 0; r < go.rows; ++r)
            for (int c = 0; c < pa.val.cols; ++c)
              pa.grad.at(r, c) += go.at(r, off2 + c);
        off2 += pa.val.cols;
      }
    };
  }
  return out;
}

Value Graph::gather_rows(Value table, std::vector<int> ids) {
  const Node& nt = node(table);
  for (int id : ids)
    if (id < 0 || id >= nt.val.rows)
      throw std::invalid_argument("gather_rows: id out of range");
  Node n;
  n.val = Mat(static_cast<int>(ids.size()), nt.val.cols);
  for (size_t r = 0; r < ids.size(); ++r) {
    const double* src = nt.val.row(ids[r]);
    double* dst = n.val.row(static_cast<int>(r));
    std::copy(src, src + nt.val.cols, dst);
  }
  n.needs_grad = nt.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int it = table.id, io = out.id;
    auto ids_ptr = std::make_shared<std::vector<int>>(std::move(ids));
    placed.back = [it, io, ids_ptr](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& pt = g.nodes_[static_cast<size_t>(it)];
      for (size_t r = 0; r < ids_ptr->size(); ++r) {
        const double* src = go.row(static_cast<int>(r));
        double* dst = pt.grad.row((*ids_ptr)[r]);
        for (int c = 0; c < go.cols; ++c) dst[c] += src[c];
      }
    };
  }
  return out;
}

Value Graph::layer_norm(Value x, Value gamma, Value beta, double eps) {
  const Node& nx = node(x);
  const Node& ng = node(gamma);
  const Node& nb = node(beta);
  const int C = nx.val.cols;
  if (ng.val.rows != 1 || ng.val.cols != C || nb.val.rows != 1 ||
      nb.val.cols != C)
    throw std::invalid_argument("layer_norm: gamma/beta must be 1 x cols");

  auto xhat = std::make_shared<Mat>(nx.val.rows, C);
  auto inv_std =
      std::make_shared<std::vector<double>>(static_cast<size_t>(nx.val.rows));
  Node n;
  n.val = Mat(nx.val.rows, C);
  for (int r = 0; r < nx.val.rows; ++r) {
    const double* row = nx.val.row(r);
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += row[c];
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      const double d = row[c] - mean;
      var += d * d;
    }
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = is;
    double* xh = xhat->row(r);
    double* out_row = n.val.row(r);
    for (int c = 0; c < C; ++c) {
      xh[c] = (row[c] - mean) * is;
      out_row[c] = ng.val.at(0, c) * xh[c] + nb.val.at(0, c);
    }
  }
  n.needs_grad = nx.needs_grad || ng.needs_grad || nb.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ix = x.id, ig = gamma.id, ib = beta.id, io = out.id;
    placed.back = [ix, ig, ib, io, xhat, inv_std, C](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& px = g.nodes_[static_cast<size_t>(ix)];
      Node& pg = g.nodes_[static_cast<size_t>(ig)];
      Node& pb = g.nodes_[static_cast<size_t>(ib)];
      for (int r = 0; r < go.rows; ++r) {
        const double* grow = go.row(r);
        const double* xh = xhat->row(r);
        if (pg.needs_grad)
          for (int c = 0; c < C; ++c) pg.grad.at(0, c) += grow[c] * xh[c];
        if (pb.needs_grad)
          for (int c = 0; c < C; ++c) pb.grad.at(0, c) += grow[c];
        if (px.needs_grad) {
          // dxhat = dy * gamma;
          // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int c = 0; c < C; ++c) {
            const double dxh = grow[c] * pg.val.at(0, c);
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[c];
          }
          mean_dxh /= C;
          mean_dxh_xh /= C;
          const double is = (*inv_std)[static_cast<size_t>(r)];
          double* pxrow = px.grad.row(r);
          for (int c = 0; c < C; ++c) {
            const double dxh = grow[c] * pg.val.at(0, c);
            pxrow[c] += is * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
          }
        }
      }
    };
  }
  return out;
}

Value Graph::softmax_rows(Value x) {
  const Node& nx = node(x);
  Node n;
  n.val = Mat(nx.val.rows, nx.val.cols);
  for (int r = 0; r < nx.val.rows; ++r) {
    const double* row = nx.val.row(r);
    double* out = n.val.row(r);
    double mx = row[0];
    for (int c = 1; c < nx.val.cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (int c = 0; c < nx.val.cols; ++c) {
      out[c] = std::exp(row[c] - mx);
      sum += out[c];
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < nx.val.cols; ++c) out[c] *= inv;
  }
  n.needs_grad = nx.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ix = x.id, io = out.id;
    placed.back = [ix, io](Graph& g) {
      const Node& self = g.nodes_[static_cast<size_t>(io)];
      const Mat& go = self.grad;
      const Mat& y = self.val;
      Node& px = g.nodes_[static_cast<size_t>(ix)];
      for (int r = 0; r < go.rows; ++r) {
        const double* grow = go.row(r);
        const double* yrow = y.row(r);
        double dot = 0.0;
        for (int c = 0; c < go.cols; ++c) dot += grow[c] * yrow[c];
        double* pxrow = px.grad.row(r);
        for (int c = 0; c < go.cols; ++c) pxrow[c] += yrow[c] * (grow[c] - dot);
      }
    };
  }
  return out;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_bwd(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return phi + x * pdf;
}

}  // namespace

Value Graph::gelu(Value x) {
  const Node& nx = node(x);
  Node n;
  n.val = nx.val;
  for (double& v : n.val.data) v = gelu_fwd(v);
  n.needs_grad = nx.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ix = x.id, io = out.id;
    placed.back = [ix, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& px = g.nodes_[static_cast<size_t>(ix)];
      for (size_t i = 0; i < go.size(); ++i)
        px.grad.data[i] += go.data[i] * gelu_bwd(px.val.data[i]);
    };
  }
  return out;
}

Value Graph::relu(Value x) {
  const Node& nx = node(x);
  Node n;
  n.val = nx.val;
  for (double& v : n.val.data) v = std::max(v, 0.0);
  n.needs_grad = nx.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int ix = x.id, io = out.id;
    placed.back = [ix, io](Graph& g) {
      const Mat& go = g.nodes_[static_cast<size_t>(io)].grad;
      Node& px = g.nodes_[static_cast<size_t>(ix)];
      for (size_t i = 0; i < go.size(); ++i)
        if (px.val.data[i] > 0.0) px.grad.data[i] += go.data[i];
    };
  }
  return out;
}

Value Graph::weighted_cross_entropy(Value logits, std::vector<int> targets,
                                    std::vector<double> weights,
                                    bool normalize) {
  const Node& nl = node(logits);
  const int T = nl.val.rows;
  const int V = nl.val.cols;
  if (static_cast<int>(targets.size()) != T ||
      static_cast<int>(weights.size()) != T)
    throw std::invalid_argument(
        "weighted_cross_entropy: targets/weights length mismatch");
  for (int j = 0; j < T; ++j)
    if (targets[static_cast<size_t>(j)] < 0 ||
        targets[static_cast<size_t>(j)] >= V)
      throw std::invalid_argument(
          "weighted_cross_entropy: target out of range");

  double wsum = 0.0;
  for (double w : weights) wsum += w;
  const double denom = normalize ? (wsum > 0.0 ? wsum : 1.0) : 1.0;

  auto probs = std::make_shared<Mat>(T, V);
  double loss = 0.0;
  for (int j = 0; j < T; ++j) {
    const double* row = nl.val.row(j);
    double mx = row[0];
    for (int c = 1; c < V; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    double* prow = probs->row(j);
    for (int c = 0; c < V; ++c) {
      prow[c] = std::exp(row[c] - mx);
      sum += prow[c];
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < V; ++c) prow[c] *= inv;
    const double w = weights[static_cast<size_t>(j)];
    if (w != 0.0) {
      const double log_p =
          row[targets[static_cast<size_t>(j)]] - mx - std::log(sum);
      loss -= w * log_p;
    }
  }
  Node n;
  n.val = Mat(1, 1);
  n.val.at(0, 0) = loss / denom;
  n.needs_grad = nl.needs_grad;
  const Value out = push(std::move(n));
  Node& placed = nodes_[static_cast<size_t>(out.id)];
  if (placed.needs_grad) {
    const int il = logits.id, io = out.id;
    auto tgt = std::make_shared<std::vector<int>>(std::move(targets));
    auto wts = std::make_shared<std::vector<double>>(std::move(weights));
    placed.back = [il, io, tgt, wts, probs, denom](Graph& g) {
      const double go = g.nodes_[static_cast<size_t>(io)].grad.at(0, 0);
      Node& pl = g.nodes_[static_cast<size_t>(il)];
      for (int j = 0; j < pl.val.rows; ++j) {
        const double w = (*wts)[static_cast<size_t>(j)];
        if (w == 0.0) continue;
        const double s = go * w / denom;
        const double* prow = probs->row(j);
        double* grow = pl.grad.row(j);
        for (int c = 0; c < pl.val.cols; ++c) grow[c] += s * prow[c];
        grow[(*tgt)[static_cast<size_t>(j)]] -= s;
      }
    };
  }
  return out;
}

void Graph::backward(Value scalar_loss) {
  check(scalar_loss);
  if (!record_)
    throw std::logic_error("Graph: backward on a forward-only graph");
  if (backward_done_)
    throw std::logic_error("Graph: backward already run on this tape");
  const Node& loss = node(scalar_loss);
  if (loss.val.rows != 1 || loss.val.cols != 1)
    throw std::invalid_argument("backward: loss must be a 1x1 scalar");
  backward_done_ = true;

  for (Node& n : nodes_)
    if (n.needs_grad) n.grad = Mat(n.val.rows, n.val.cols);
  if (!nodes_[static_cast<size_t>(scalar_loss.id)].needs_grad) return;
  nodes_[static_cast<size_t>(scalar_loss.id)].grad.at(0, 0) = 1.0;

  // Creation order is a topological order; walk the tape backwards once.
  for (int i = scalar_loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && n.back) n.back(*this);
  }
}

const Mat* Graph::param_grad(const Tensor& t) const {
  check_alive();
  const auto it = leaf_ids_.find(&t);
  if (it == leaf_ids_.end()) return nullptr;
  const Node& n = nodes_[static_cast<size_t>(it->second)];
  if (n.grad.size() == 0) return nullptr;
  return &n.grad;
}

}  // namespace laneseq::ad
