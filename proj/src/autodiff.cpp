#include "deforest/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "deforest/common.hpp"

namespace deforest::ad {

Node* Graph::make(Tensor value, bool needs_grad) {
    nodes_.emplace_back();
    Node* n = &nodes_.back();
    n->owned = std::move(value);
    n->val = &n->owned;
    n->needs_grad = needs_grad;
    return n;
}

Node* Graph::leaf(const Tensor& external, bool needs_grad) {
    nodes_.emplace_back();
    Node* n = &nodes_.back();
    n->val = &external;
    n->needs_grad = needs_grad;
    return n;
}

void Graph::ensure_grad(Node* n) {
    if (n->grad.data.empty()) n->grad = Tensor::zeros(n->v().shape);
}

namespace {

void require_rank3(const Node* x, const char* who) {
    if (x->v().rank() != 3) fail(who, ": expected a rank-3 (C,H,W) tensor");
}

} // namespace

Node* Graph::conv2d(Node* x, Node* w, Node* b) {
    require_rank3(x, "conv2d");
    if (w->v().rank() != 4 || w->v().dim(2) != w->v().dim(3) || w->v().dim(2) % 2 == 0)
        fail("conv2d: weight must be (Cout,Cin,k,k) with odd k");
    const int cin = x->v().dim(0), h = x->v().dim(1), wd = x->v().dim(2);
    const int cout = w->v().dim(0), k = w->v().dim(2);
    if (w->v().dim(1) != cin)
        fail("conv2d: weight expects ", w->v().dim(1), " input channels, image has ", cin);
    if (b->v().rank() != 1 || b->v().dim(0) != cout) fail("conv2d: bias shape mismatch");
    const int pad = k / 2;

    Tensor out = Tensor::zeros({cout, h, wd});
    const double* xv = x->v().data.data();
    const double* wv = w->v().data.data();
    double* ov = out.data.data();
    const size_t plane = static_cast<size_t>(h) * wd;

    for (int co = 0; co < cout; ++co) {
        double* op = ov + co * plane;
        const double bias = b->v().data[co];
        std::fill(op, op + plane, bias);
        for (int ci = 0; ci < cin; ++ci) {
            const double* ip = xv + ci * plane;
            for (int ky = 0; ky < k; ++ky) {
                const int dy = ky - pad;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < k; ++kx) {
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                    const double wgt = wv[((static_cast<size_t>(co) * cin + ci) * k + ky) * k + kx];
                    if (wgt == 0.0) continue;
                    for (int yy = y0; yy < y1; ++yy) {
                        double* orow = op + static_cast<size_t>(yy) * wd;
                        const double* irow = ip + static_cast<size_t>(yy + dy) * wd + dx;
                        for (int xx = x0; xx < x1; ++xx) orow[xx] += wgt * irow[xx];
                    }
                }
            }
        }
    }

    Node* y = make(std::move(out), x->needs_grad || w->needs_grad || b->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        const double* gy = y->grad.data.data();
        const double* xvv = x->v().data.data();
        const double* wvv = w->v().data.data();
        if (b->needs_grad) {
            ensure_grad(b);
            for (int co = 0; co < cout; ++co) {
                double s = 0.0;
                const double* gp = gy + co * plane;
                for (size_t i = 0; i < plane; ++i) s += gp[i];
                b->grad.data[co] += s;
            }
        }
        for (int co = 0; co < cout; ++co) {
            const double* gp = gy + co * plane;
            for (int ci = 0; ci < cin; ++ci) {
                for (int ky = 0; ky < k; ++ky) {
                    const int dy = ky - pad;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    for (int kx = 0; kx < k; ++kx) {
                        const int dx = kx - pad;
                        const int x0 = std::max(0, -dx), x1 = std::min(wd, wd - dx);
                        const size_t widx = ((static_cast<size_t>(co) * cin + ci) * k + ky) * k + kx;
                        if (w->needs_grad) {
                            ensure_grad(w);
                            const double* ip = xvv + ci * plane;
                            double s = 0.0;
                            for (int yy = y0; yy < y1; ++yy) {
                                const double* grow = gp + static_cast<size_t>(yy) * wd;
                                const double* irow = ip + static_cast<size_t>(yy + dy) * wd + dx;
                                for (int xx = x0; xx < x1; ++xx) s += grow[xx] * irow[xx];
                            }
                            w->grad.data[widx] += s;
                        }
                        if (x->needs_grad) {
                            ensure_grad(x);
                            const double wgt = wvv[widx];
                            if (wgt == 0.0) continue;
                            double* gxp = x->grad.data.data() + ci * plane;
                            for (int yy = y0; yy < y1; ++yy) {
                                const double* grow = gp + static_cast<size_t>(yy) * wd;
                                double* gxrow = gxp + static_cast<size_t>(yy + dy) * wd + dx;
                                for (int xx = x0; xx < x1; ++xx) gxrow[xx] += wgt * grow[xx];
                            }
                        }
                    }
                }
            }
        }
    });
    return y;
}

Node* Graph::conv1x1_s2(Node* x, Node* w) {
    require_rank3(x, "conv1x1_s2");
    const int c = x->v().dim(0), h = x->v().dim(1), wd = x->v().dim(2);
    if (h % 2 != 0 || wd % 2 != 0) fail("conv1x1_s2: spatial dims must be even, got ", h, "x", wd);
    if (w->v().rank() != 2 || w->v().dim(1) != c)
        fail("conv1x1_s2: weight expects (F,", c, "), got (", w->v().dim(0), ",", w->v().dim(1), ")");
    const int f = w->v().dim(0);
    const int oh = h / 2, ow = wd / 2;

    Tensor out = Tensor::zeros({f, oh, ow});
    for (int fo = 0; fo < f; ++fo)
        for (int ci = 0; ci < c; ++ci) {
            const double wgt = w->v().at2(fo, ci);
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx)
                    out.at3(fo, yy, xx) += wgt * x->v().at3(ci, 2 * yy, 2 * xx);
        }

    Node* y = make(std::move(out), x->needs_grad || w->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        if (w->needs_grad) ensure_grad(w);
        if (x->needs_grad) ensure_grad(x);
        for (int fo = 0; fo < f; ++fo)
            for (int ci = 0; ci < c; ++ci) {
                const double wgt = w->v().at2(fo, ci);
                double ws = 0.0;
                for (int yy = 0; yy < oh; ++yy)
                    for (int xx = 0; xx < ow; ++xx) {
                        const double gy = y->grad.at3(fo, yy, xx);
                        ws += gy * x->v().at3(ci, 2 * yy, 2 * xx);
                        if (x->needs_grad) x->grad.at3(ci, 2 * yy, 2 * xx) += gy * wgt;
                    }
                if (w->needs_grad) w->grad.at2(fo, ci) += ws;
            }
    });
    return y;
}

Node* Graph::conv1x1(Node* x, Node* w, Node* b) {
    require_rank3(x, "conv1x1");
    const int c = x->v().dim(0), h = x->v().dim(1), wd = x->v().dim(2);
    if (w->v().rank() != 2 || w->v().dim(1) != c)
        fail("conv1x1: weight expects (F,", c, "), got (", w->v().dim(0), ",", w->v().dim(1), ")");
    const int f = w->v().dim(0);
    if (b && (b->v().rank() != 1 || b->v().dim(0) != f)) fail("conv1x1: bias shape mismatch");

    Tensor out = Tensor::zeros({f, h, wd});
    const size_t plane = static_cast<size_t>(h) * wd;
    for (int fo = 0; fo < f; ++fo) {
        double* op = out.data.data() + fo * plane;
        if (b) std::fill(op, op + plane, b->v().data[fo]);
        for (int ci = 0; ci < c; ++ci) {
            const double wgt = w->v().at2(fo, ci);
            const double* ip = x->v().data.data() + ci * plane;
            for (size_t i = 0; i < plane; ++i) op[i] += wgt * ip[i];
        }
    }

    Node* y = make(std::move(out), x->needs_grad || w->needs_grad || (b && b->needs_grad));
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        if (b && b->needs_grad) {
            ensure_grad(b);
            for (int fo = 0; fo < f; ++fo) {
                const double* gp = y->grad.data.data() + fo * plane;
                double s = 0.0;
                for (size_t i = 0; i < plane; ++i) s += gp[i];
                b->grad.data[fo] += s;
            }
        }
        if (w->needs_grad) ensure_grad(w);
        if (x->needs_grad) ensure_grad(x);
        for (int fo = 0; fo < f; ++fo) {
            const double* gp = y->grad.data.data() + fo * plane;
            for (int ci = 0; ci < c; ++ci) {
                const double* ip = x->v().data.data() + ci * plane;
                if (w->needs_grad) {
                    double s = 0.0;
                    for (size_t i = 0; i < plane; ++i) s += gp[i] * ip[i];
                    w->grad.at2(fo, ci) += s;
                }
                if (x->needs_grad) {
                    const double wgt = w->v().at2(fo, ci);
                    double* gx = x->grad.data.data() + ci * plane;
                    for (size_t i = 0; i < plane; ++i) gx[i] += wgt * gp[i];
                }
            }
        }
    });
    return y;
}

Node* Graph::relu(Node* x) {
    Tensor out = x->v();
    for (double& v : out.data) v = std::max(v, 0.0);
    Node* y = make(std::move(out), x->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        ensure_grad(x);
        for (size_t i = 0; i < x->grad.data.size(); ++i)
            if (x->v().data[i] > 0.0) x->grad.data[i] += y->grad.data[i];
    });
    return y;
}

Node* Graph::sigmoid(Node* x) {
    Tensor out = x->v();
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Node* y = make(std::move(out), x->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        ensure_grad(x);
        for (size_t i = 0; i < x->grad.data.size(); ++i) {
            const double s = y->v().data[i];
            x->grad.data[i] += y->grad.data[i] * s * (1.0 - s);
        }
    });
    return y;
}

Node* Graph::channel_norm(Node* x, Node* gamma, Node* beta, double eps) {
    require_rank3(x, "channel_norm");
    const int c = x->v().dim(0), h = x->v().dim(1), wd = x->v().dim(2);
    if (gamma->v().rank() != 1 || gamma->v().dim(0) != c || beta->v().rank() != 1 ||
        beta->v().dim(0) != c)
        fail("channel_norm: affine parameter shape mismatch for ", c, " channels");
    const size_t plane = static_cast<size_t>(h) * wd;
    const double inv_n = 1.0 / static_cast<double>(plane);

    Tensor out = Tensor::zeros({c, h, wd});
    // Per-channel mean and 1/sqrt(var+eps), kept for the backward pass.
    auto stats = std::make_shared<std::vector<double>>(2 * c);
    for (int ci = 0; ci < c; ++ci) {
        const double* ip = x->v().data.data() + ci * plane;
        double mean = 0.0;
        for (size_t i = 0; i < plane; ++i) mean += ip[i];
        mean *= inv_n;
        double var = 0.0;
        for (size_t i = 0; i < plane; ++i) {
            const double d = ip[i] - mean;
            var += d * d;
        }
        var *= inv_n;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * ci] = mean;
        (*stats)[2 * ci + 1] = inv;
        const double g = gamma->v().data[ci], bt = beta->v().data[ci];
        double* op = out.data.data() + ci * plane;
        for (size_t i = 0; i < plane; ++i) op[i] = g * (ip[i] - mean) * inv + bt;
    }

    Node* y = make(std::move(out), x->needs_grad || gamma->needs_grad || beta->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        for (int ci = 0; ci < c; ++ci) {
            const double mean = (*stats)[2 * ci], inv = (*stats)[2 * ci + 1];
            const double g = gamma->v().data[ci];
            const double* ip = x->v().data.data() + ci * plane;
            const double* gp = y->grad.data.data() + ci * plane;
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (size_t i = 0; i < plane; ++i) {
                const double xhat = (ip[i] - mean) * inv;
                sum_gy += gp[i];
                sum_gy_xhat += gp[i] * xhat;
            }
            if (gamma->needs_grad) {
                ensure_grad(gamma);
                gamma->grad.data[ci] += sum_gy_xhat;
            }
            if (beta->needs_grad) {
                ensure_grad(beta);
                beta->grad.data[ci] += sum_gy;
            }
            if (x->needs_grad) {
                ensure_grad(x);
                double* gx = x->grad.data.data() + ci * plane;
                const double mean_gy = sum_gy * inv_n;
                const double mean_gy_xhat = sum_gy_xhat * inv_n;
                for (size_t i = 0; i < plane; ++i) {
                    const double xhat = (ip[i] - mean) * inv;
                    gx[i] += g * inv * (gp[i] - mean_gy - xhat * mean_gy_xhat);
                }
            }
        }
    });
    return y;
}

Node* Graph::maxpool2(Node* x) {
    require_rank3(x, "maxpool2");
    const int c = x->v().dim(0), h = x->v().dim(1), wd = x->v().dim(2);
    if (h % 2 != 0 || wd % 2 != 0) fail("maxpool2: spatial dims must be even, got ", h, "x", wd);
    const int oh = h / 2, ow = wd / 2;

    Tensor out = Tensor::zeros({c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.data.size());
    for (int ci = 0; ci < c; ++ci)
        for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx) {
                double best = -std::numeric_limits<double>::infinity();
                std::uint32_t best_idx = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const size_t idx =
                            (static_cast<size_t>(ci) * h + 2 * yy + dy) * wd + 2 * xx + dx;
                        const double v = x->v().data[idx];
                        if (v > best) { // first cell wins ties
                            best = v;
                            best_idx = static_cast<std::uint32_t>(idx);
                        }
                    }
                out.at3(ci, yy, xx) = best;
                (*argmax)[(static_cast<size_t>(ci) * oh + yy) * ow + xx] = best_idx;
            }

    Node* y = make(std::move(out), x->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        ensure_grad(x);
        for (size_t i = 0; i < y->grad.data.size(); ++i)
            x->grad.data[(*argmax)[i]] += y->grad.data[i];
    });
    return y;
}

Node* Graph::upsample2(Node* x) {
    require_rank3(x, "upsample2");
    const int c = x->v().dim(0), h = x->v().dim(1), wd = x->v().dim(2);
    Tensor out = Tensor::zeros({c, 2 * h, 2 * wd});
    for (int ci = 0; ci < c; ++ci)
        for (int yy = 0; yy < 2 * h; ++yy)
            for (int xx = 0; xx < 2 * wd; ++xx)
                out.at3(ci, yy, xx) = x->v().at3(ci, yy / 2, xx / 2);

    Node* y = make(std::move(out), x->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        ensure_grad(x);
        for (int ci = 0; ci < c; ++ci)
            for (int yy = 0; yy < 2 * h; ++yy)
                for (int xx = 0; xx < 2 * wd; ++xx)
                    x->grad.at3(ci, yy / 2, xx / 2) += y->grad.at3(ci, yy, xx);
    });
    return y;
}

Node* Graph::concat_c(Node* a, Node* b) {
    require_rank3(a, "concat_c");
    require_rank3(b, "concat_c");
    if (a->v().dim(1) != b->v().dim(1) || a->v().dim(2) != b->v().dim(2))
        fail("concat_c: spatial dims differ");
    const int ca = a->v().dim(0), cb = b->v().dim(0);
    Tensor out = Tensor::zeros({ca + cb, a->v().dim(1), a->v().dim(2)});
    std::copy(a->v().data.begin(), a->v().data.end(), out.data.begin());
    std::copy(b->v().data.begin(), b->v().data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(a->v().data.size()));

    Node* y = make(std::move(out), a->needs_grad || b->needs_grad);
    if (!y->needs_grad) return y;
    const size_t na = a->v().data.size();
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        if (a->needs_grad) {
            ensure_grad(a);
            for (size_t i = 0; i < na; ++i) a->grad.data[i] += y->grad.data[i];
        }
        if (b->needs_grad) {
            ensure_grad(b);
            for (size_t i = 0; i < b->grad.data.size(); ++i)
                b->grad.data[i] += y->grad.data[na + i];
        }
    });
    return y;
}

Node* Graph::add(Node* a, Node* b) {
    if (!a->v().same_shape(b->v())) fail("add: shape mismatch");
    Tensor out = a->v();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->v().data[i];
    Node* y = make(std::move(out), a->needs_grad || b->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        for (Node* p : {a, b}) {
            if (!p->needs_grad) continue;
            ensure_grad(p);
            for (size_t i = 0; i < p->grad.data.size(); ++i) p->grad.data[i] += y->grad.data[i];
        }
    });
    return y;
}

Node* Graph::gate_mul(Node* x, Node* alpha) {
    require_rank3(x, "gate_mul");
    if (alpha->v().rank() != 3 || alpha->v().dim(0) != 1 || alpha->v().dim(1) != x->v().dim(1) ||
        alpha->v().dim(2) != x->v().dim(2))
        fail("gate_mul: alpha must be (1,H,W) matching x");
    const int c = x->v().dim(0);
    const size_t plane = static_cast<size_t>(x->v().dim(1)) * x->v().dim(2);

    Tensor out = x->v();
    for (int ci = 0; ci < c; ++ci) {
        double* op = out.data.data() + ci * plane;
        const double* ap = alpha->v().data.data();
        for (size_t i = 0; i < plane; ++i) op[i] *= ap[i];
    }

    Node* y = make(std::move(out), x->needs_grad || alpha->needs_grad);
    if (!y->needs_grad) return y;
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        if (x->needs_grad) ensure_grad(x);
        if (alpha->needs_grad) ensure_grad(alpha);
        const double* ap = alpha->v().data.data();
        for (int ci = 0; ci < c; ++ci) {
            const double* gp = y->grad.data.data() + ci * plane;
            const double* ip = x->v().data.data() + ci * plane;
            if (x->needs_grad) {
                double* gx = x->grad.data.data() + ci * plane;
                for (size_t i = 0; i < plane; ++i) gx[i] += gp[i] * ap[i];
            }
            if (alpha->needs_grad) {
                double* ga = alpha->grad.data.data();
                for (size_t i = 0; i < plane; ++i) ga[i] += gp[i] * ip[i];
            }
        }
    });
    return y;
}

Node* Graph::combined_loss(Node* pred, const Grid& target, const LossConfig& config) {
    require_rank3(pred, "combined_loss");
    if (pred->v().dim(0) != 1) fail("combined_loss: prediction must be single channel");
    if (pred->v().dim(1) != target.h || pred->v().dim(2) != target.w)
        fail("combined_loss: prediction ", pred->v().dim(1), "x", pred->v().dim(2),
             " vs target ", target.h, "x", target.w);

    Grid pgrid(target.h, target.w);
    pgrid.v = pred->v().data;
    const double value = deforest::combined_loss(pgrid, target, config);

    Tensor out = Tensor::zeros({1});
    out.data[0] = value;
    Node* y = make(std::move(out), pred->needs_grad);
    if (!y->needs_grad) return y;

    const size_t n = target.v.size();
    auto tcopy = std::make_shared<std::vector<double>>(target.v);
    tape_.push_back([=] {
        if (!has_grad(y)) return;
        ensure_grad(pred);
        const double gy = y->grad.data[0];
        const double eps = config.prob_clip_epsilon;
        const double inv_n = 1.0 / static_cast<double>(n);

        double inter = 0.0, psum = 0.0, tsum = 0.0;
        for (size_t i = 0; i < n; ++i) {
            inter += pred->v().data[i] * (*tcopy)[i];
            psum += pred->v().data[i];
            tsum += (*tcopy)[i];
        }
        const double s = config.dice_smooth;
        const double denom = psum + tsum + s;
        const double numer = 2.0 * inter + s;

        for (size_t i = 0; i < n; ++i) {
            const double p = pred->v().data[i];
            const double t = (*tcopy)[i];
            double d = 0.0;
            if (p >= eps && p <= 1.0 - eps) {
                const double pc = std::clamp(p, eps, 1.0 - eps);
                d += config.bce_weight * (pc - t) / (pc * (1.0 - pc)) * inv_n;
            }
            d -= config.dice_weight * (2.0 * t * denom - numer) / (denom * denom);
            pred->grad.data[i] += gy * d;
        }
    });
    return y;
}

void Graph::backward(Node* root) {
    if (root->v().numel() != 1) fail("backward: root must be a scalar node");
    ensure_grad(root);
    root->grad.data[0] = 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

} // namespace deforest::ad
