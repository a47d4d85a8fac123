#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "deforest/losses.hpp"
#include "deforest/tensor.hpp"

namespace deforest::ad {

// Reverse-mode tape over dense double tensors. A Graph is built per
// forward pass and owns all intermediate values; leaves reference
// caller-owned tensors (parameters, input image) without copying.
struct Node {
    Tensor owned;
    const Tensor* val = nullptr; // points at `owned` except for leaves
    Tensor grad;                 // allocated on first accumulation
    bool needs_grad = false;

    const Tensor& v() const { return *val; }
};

class Graph {
public:
    Node* leaf(const Tensor& external, bool needs_grad);

    // 3x3-style conv, odd square kernel, zero padding, stride 1.
    // x (Cin,H,W), w (Cout,Cin,k,k), b (Cout) -> (Cout,H,W)
    Node* conv2d(Node* x, Node* w, Node* b);

    // 1x1 projection, stride 2, no bias: x (C,H,W), w (F,C) -> (F,H/2,W/2)
    Node* conv1x1_s2(Node* x, Node* w);

    // 1x1 projection, stride 1: x (C,H,W), w (F,C), b (F) -> (F,H,W)
    Node* conv1x1(Node* x, Node* w, Node* b);

    Node* relu(Node* x);
    Node* sigmoid(Node* x);

    // Per-channel normalization over the spatial dims with learnable
    // affine parameters; population variance, epsilon inside the sqrt.
    Node* channel_norm(Node* x, Node* gamma, Node* beta, double eps = 1e-5);

    Node* maxpool2(Node* x);   // 2x2, stride 2; ties resolved to the first cell
    Node* upsample2(Node* x);  // nearest neighbour 2x
    Node* concat_c(Node* a, Node* b);
    Node* add(Node* a, Node* b);

    // y[c,i,j] = x[c,i,j] * alpha[0,i,j]; alpha broadcast over channels.
    Node* gate_mul(Node* x, Node* alpha);

    // Scalar node carrying bce_weight*BCE + dice_weight*Dice of a (1,H,W)
    // probability map against a binary target. Forward value is computed
    // with the exact same arithmetic as losses.hpp.
    Node* combined_loss(Node* pred, const Grid& target, const LossConfig& config);

    // Seeds d(root) = 1 and runs the tape in reverse.
    void backward(Node* root);

private:
    Node* make(Tensor value, bool needs_grad);
    static void ensure_grad(Node* n);
    static bool has_grad(const Node* n) { return !n->grad.data.empty(); }

    std::deque<Node> nodes_;
    std::vector<std::function<void()>> tape_;
};

} // namespace deforest::ad
