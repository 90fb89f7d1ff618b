#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "minde/tensor.hpp"

namespace minde {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reverse-mode autodiff tape over rank-2 tensors. Ops append nodes, so node
// order is a valid topological order; backward() sweeps it once in reverse.
class Graph {
public:
    int constant(Tensor v) { return push(std::move(v), false, {}); }

    int leaf(Tensor v) { return push(std::move(v), true, {}); }

    const Tensor& value(int id) const { return nodes_[check(id)].value; }

    const Tensor& grad(int id) const {
        const Node& n = nodes_[check(id)];
        if (!n.needs_grad) throw std::logic_error("graph: node does not track gradients");
        return n.grad;
    }

    double scalar(int id) const {
        const Tensor& v = value(id);
        if (v.size() != 1) throw std::logic_error("graph: node is not a scalar");
        return v[0];
    }

    int matmul(int a, int b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.cols() != bv.rows()) throw std::invalid_argument("matmul: shape mismatch");
        Tensor out(av.rows(), bv.cols());
        matmul_accum(av, bv, out);
        return push(std::move(out), needs(a) || needs(b),
                    [a, b](Graph& g, int id) {
                        const Tensor& dc = g.nodes_[id].grad;
                        if (g.needs(a)) matmul_bt_accum(dc, g.value(b), g.nodes_[a].grad);
                        if (g.needs(b)) matmul_at_accum(g.value(a), dc, g.nodes_[b].grad);
                    });
    }

    int add(int a, int b) { return binary_elementwise(a, b, /*sign_b=*/+1.0); }
    int sub(int a, int b) { return binary_elementwise(a, b, /*sign_b=*/-1.0); }

    int mul(int a, int b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
        Tensor out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
        return push(std::move(out), needs(a) || needs(b),
                    [a, b](Graph& g, int id) {
                        const Tensor& dc = g.nodes_[id].grad;
                        if (g.needs(a)) {
                            Tensor& da = g.nodes_[a].grad;
                            const Tensor& bv = g.value(b);
                            for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * bv[i];
                        }
                        if (g.needs(b)) {
                            Tensor& db = g.nodes_[b].grad;
                            const Tensor& av = g.value(a);
                            for (std::size_t i = 0; i < dc.size(); ++i) db[i] += dc[i] * av[i];
                        }
                    });
    }

    // (r x c) + (1 x c), bias broadcast over rows
    int add_rowvec(int a, int b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (bv.rows() != 1 || bv.cols() != av.cols())
            throw std::invalid_argument("add_rowvec: shape mismatch");
        Tensor out = av;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            double* row = out.row_ptr(i);
            for (std::size_t j = 0; j < out.cols(); ++j) row[j] += bv[j];
        }
        return push(std::move(out), needs(a) || needs(b),
                    [a, b](Graph& g, int id) {
                        const Tensor& dc = g.nodes_[id].grad;
                        if (g.needs(a)) {
                            Tensor& da = g.nodes_[a].grad;
                            for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
                        }
                        if (g.needs(b)) {
                            Tensor& db = g.nodes_[b].grad;
                            for (std::size_t i = 0; i < dc.rows(); ++i) {
                                const double* row = dc.row_ptr(i);
                                for (std::size_t j = 0; j < dc.cols(); ++j) db[j] += row[j];
                            }
                        }
                    });
    }

    int silu(int a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sigmoid(out[i]);
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        const Tensor& x = g.value(a);
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i) {
                            const double s = sigmoid(x[i]);
                            da[i] += dc[i] * s * (1.0 + x[i] * (1.0 - s));
                        }
                    });
    }

    int relu(int a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        const Tensor& x = g.value(a);
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i)
                            if (x[i] > 0.0) da[i] += dc[i];
                    });
    }

    int exp(int a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
        out.require_finite("exp");
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        const Tensor& ev = g.nodes_[id].value;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * ev[i];
                    });
    }

    int log(int a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
        out.require_finite("log");
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        const Tensor& x = g.value(a);
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] / x[i];
                    });
    }

    int square(int a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        const Tensor& x = g.value(a);
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += 2.0 * dc[i] * x[i];
                    });
    }

    int scale(int a, double s) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
        return push(std::move(out), needs(a),
                    [a, s](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i] * s;
                    });
    }

    int add_scalar(int a, double s) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
                    });
    }

    // out[i,j] = a[i,j] * w[i]  with w a per-row constant
    int scale_rows(int a, std::vector<double> w) {
        const Tensor& av = value(a);
        if (w.size() != av.rows()) throw std::invalid_argument("scale_rows: weight length mismatch");
        Tensor out = av;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            double* row = out.row_ptr(i);
            for (std::size_t j = 0; j < out.cols(); ++j) row[j] *= w[i];
        }
        return push(std::move(out), needs(a),
                    [a, w = std::move(w)](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.rows(); ++i) {
                            const double* row = dc.row_ptr(i);
                            double* arow = da.row_ptr(i);
                            for (std::size_t j = 0; j < dc.cols(); ++j) arow[j] += row[j] * w[i];
                        }
                    });
    }

    // out[i,j] = a[i,j] + w[i]  with w a per-row constant
    int shift_rows(int a, std::vector<double> w) {
        const Tensor& av = value(a);
        if (w.size() != av.rows()) throw std::invalid_argument("shift_rows: shift length mismatch");
        Tensor out = av;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            double* row = out.row_ptr(i);
            for (std::size_t j = 0; j < out.cols(); ++j) row[j] += w[i];
        }
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
                    });
    }

    int concat_cols(int a, int b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols: row mismatch");
        Tensor out(av.rows(), av.cols() + bv.cols());
        for (std::size_t i = 0; i < av.rows(); ++i) {
            double* row = out.row_ptr(i);
            const double* ar = av.row_ptr(i);
            const double* br = bv.row_ptr(i);
            for (std::size_t j = 0; j < av.cols(); ++j) row[j] = ar[j];
            for (std::size_t j = 0; j < bv.cols(); ++j) row[av.cols() + j] = br[j];
        }
        const std::size_t ac = av.cols(), bc = bv.cols();
        return push(std::move(out), needs(a) || needs(b),
                    [a, b, ac, bc](Graph& g, int id) {
                        const Tensor& dc = g.nodes_[id].grad;
                        for (std::size_t i = 0; i < dc.rows(); ++i) {
                            const double* row = dc.row_ptr(i);
                            if (g.needs(a)) {
                                double* ar = g.nodes_[a].grad.row_ptr(i);
                                for (std::size_t j = 0; j < ac; ++j) ar[j] += row[j];
                            }
                            if (g.needs(b)) {
                                double* br = g.nodes_[b].grad.row_ptr(i);
                                for (std::size_t j = 0; j < bc; ++j) br[j] += row[ac + j];
                            }
                        }
                    });
    }

    // columns [c0, c1)
    int slice_cols(int a, std::size_t c0, std::size_t c1) {
        const Tensor& av = value(a);
        if (c0 >= c1 || c1 > av.cols()) throw std::invalid_argument("slice_cols: bad range");
        Tensor out(av.rows(), c1 - c0);
        for (std::size_t i = 0; i < av.rows(); ++i) {
            const double* ar = av.row_ptr(i);
            double* row = out.row_ptr(i);
            for (std::size_t j = c0; j < c1; ++j) row[j - c0] = ar[j];
        }
        return push(std::move(out), needs(a),
                    [a, c0, c1](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.rows(); ++i) {
                            const double* row = dc.row_ptr(i);
                            double* ar = da.row_ptr(i);
                            for (std::size_t j = c0; j < c1; ++j) ar[j] += row[j - c0];
                        }
                    });
    }

    int row_sum(int a) {
        const Tensor& av = value(a);
        Tensor out(av.rows(), 1);
        for (std::size_t i = 0; i < av.rows(); ++i) {
            const double* row = av.row_ptr(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < av.cols(); ++j) acc += row[j];
            out(i, 0) = acc;
        }
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < da.rows(); ++i) {
                            double* ar = da.row_ptr(i);
                            for (std::size_t j = 0; j < da.cols(); ++j) ar[j] += dc(i, 0);
                        }
                    });
    }

    int sum_all(int a) { return reduce_all(a, /*mean=*/false); }
    int mean_all(int a) { return reduce_all(a, /*mean=*/true); }

    // same data, new (rows, cols); element count must match
    int reshape(int a, std::size_t r, std::size_t c) {
        const Tensor& av = value(a);
        if (r * c != av.size()) throw std::invalid_argument("reshape: element count mismatch");
        Tensor out(r, c);
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i];
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
                    });
    }

    // (n x n) -> (n x 1) diagonal
    int gather_diag(int a) {
        const Tensor& av = value(a);
        if (av.rows() != av.cols()) throw std::invalid_argument("gather_diag: not square");
        Tensor out(av.rows(), 1);
        for (std::size_t i = 0; i < av.rows(); ++i) out(i, 0) = av(i, i);
        return push(std::move(out), needs(a),
                    [a](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const Tensor& dc = g.nodes_[id].grad;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < dc.rows(); ++i) da(i, i) += dc(i, 0);
                    });
    }

    // Backward from a scalar loss. Each node is visited exactly once.
    void backward(int loss) {
        const Tensor& lv = value(loss);
        if (lv.size() != 1) throw std::logic_error("backward: loss is not a scalar");
        if (consumed_) throw std::logic_error("backward: tape already consumed");
        consumed_ = true;
        for (Node& n : nodes_)
            if (n.needs_grad) n.grad = Tensor(n.value.rows(), n.value.cols());
        nodes_[loss].grad[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.needs_grad && n.backward) n.backward(*this, id);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Graph&, int)> backward;
        bool needs_grad = false;
    };

    int binary_elementwise(int a, int b, double sign_b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        if (!av.same_shape(bv)) throw std::invalid_argument("add/sub: shape mismatch");
        Tensor out = av;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign_b * bv[i];
        return push(std::move(out), needs(a) || needs(b),
                    [a, b, sign_b](Graph& g, int id) {
                        const Tensor& dc = g.nodes_[id].grad;
                        if (g.needs(a)) {
                            Tensor& da = g.nodes_[a].grad;
                            for (std::size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
                        }
                        if (g.needs(b)) {
                            Tensor& db = g.nodes_[b].grad;
                            for (std::size_t i = 0; i < dc.size(); ++i) db[i] += sign_b * dc[i];
                        }
                    });
    }

    int reduce_all(int a, bool mean) {
        const Tensor& av = value(a);
        const double scale = mean ? 1.0 / static_cast<double>(av.size()) : 1.0;
        double acc = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
        Tensor out(1, 1);
        out[0] = acc * scale;
        return push(std::move(out), needs(a),
                    [a, scale](Graph& g, int id) {
                        if (!g.needs(a)) return;
                        const double d = g.nodes_[id].grad[0] * scale;
                        Tensor& da = g.nodes_[a].grad;
                        for (std::size_t i = 0; i < da.size(); ++i) da[i] += d;
                    });
    }

    bool needs(int id) const { return nodes_[check(id)].needs_grad; }

    int check(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw std::out_of_range("graph: bad node id");
        return id;
    }

    int push(Tensor v, bool needs_grad, std::function<void(Graph&, int)> bwd) {
        nodes_.push_back(Node{std::move(v), Tensor{}, std::move(bwd), needs_grad});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace minde
