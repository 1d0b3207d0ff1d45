"""Shared neural encoders: word+position embedding composition, the BiLSTM
used by the sentiment branch, and the 5-layer CNN stack used by the
extraction branch.

Layer plan of the CNN stack (kernel size x output channels):
  layer 1: 1 x C; layer 2: three parallel branches 2/3/4 x C/3 each,
  concatenated channel-wise back to C; layers 3-5: 5 x C. Same-padding keeps
  sequence length, ReLU after every layer, masked positions re-zeroed.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


def glorot(rng, fan_in, fan_out, shape):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-r, r, size=shape), requires_grad=True)


@dataclass
class LstmCellParams:
    """One direction's cell. Gates are stacked i, f, o, g in w and b."""
    w: Tensor  # (4h, in+h)
    b: Tensor  # (4h,)

    @property
    def hidden(self):
        return self.w.shape[0] // 4


@dataclass
class BiLstmParams:
    forward: LstmCellParams
    backward: LstmCellParams

    @property
    def hidden_total(self):
        return 2 * self.forward.hidden

    def named_parameters(self, prefix="bilstm"):
        return {
            prefix + ".fwd.w": self.forward.w,
            prefix + ".fwd.b": self.forward.b,
            prefix + ".bwd.w": self.backward.w,
            prefix + ".bwd.b": self.backward.b,
        }


def init_lstm_cell(rng, in_dim, hidden):
    w = glorot(rng, in_dim + hidden, hidden, (4 * hidden, in_dim + hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return LstmCellParams(w, Tensor(b, requires_grad=True))


def init_bilstm(rng, in_dim, hidden_total):
    if hidden_total % 2:
        raise T.ConfigError("BiLSTM width %d must be even" % hidden_total)
    h = hidden_total // 2
    return BiLstmParams(init_lstm_cell(rng, in_dim, h),
                        init_lstm_cell(rng, in_dim, h))


def lstm_cell(x, h_prev, c_prev, params):
    """One LSTM step: i,f,o = sigmoid, g = tanh, c = f*c_prev + i*g,
    h = o*tanh(c)."""
    h = params.hidden
    z = T.add(T.matmul(params.w, T.concat([x, h_prev], axis=0)), params.b)
    i = T.sigmoid(T.slice_rows(z, 0, h))
    f = T.sigmoid(T.slice_rows(z, h, 2 * h))
    o = T.sigmoid(T.slice_rows(z, 2 * h, 3 * h))
    g = T.tanh(T.slice_rows(z, 3 * h, 4 * h))
    c = T.add(T.mul(f, c_prev), T.mul(i, g))
    return T.mul(o, T.tanh(c)), c


def _run_direction(E, mask, cell, order):
    h = Tensor(np.zeros(cell.hidden))
    c = Tensor(np.zeros(cell.hidden))
    zero = Tensor(np.zeros(cell.hidden))
    rows = {}
    for t in order:
        if mask[t]:
            h, c = lstm_cell(T.get_row(E, t), h, c, cell)
            rows[t] = h
        else:
            rows[t] = zero
    return rows


def bilstm_forward(E, mask, params):
    """Bidirectional hidden states, n x hidden_total.

    Masked steps are skipped entirely: they output zero rows and leave both
    directions' recurrent state untouched.
    """
    n = E.shape[0]
    mask = np.asarray(mask, dtype=bool)
    fwd = _run_direction(E, mask, params.forward, range(n))
    bwd = _run_direction(E, mask, params.backward, range(n - 1, -1, -1))
    return T.stack_rows([T.concat([fwd[t], bwd[t]], axis=0) for t in range(n)])


@dataclass
class ConvBranchParams:
    kernel: int
    weights: list  # kernel entries, each Tensor (in, out)
    bias: Tensor   # (out,)


@dataclass
class CnnStackParams:
    layers: list  # per layer, list of ConvBranchParams (parallel branches)

    @property
    def out_channels(self):
        return sum(b.weights[0].shape[1] for b in self.layers[-1])

    def named_parameters(self, prefix="cnn"):
        named = {}
        for li, layer in enumerate(self.layers, start=1):
            for bi, branch in enumerate(layer):
                base = "%s.l%d.k%d" % (prefix, li, branch.kernel)
                for j, w in enumerate(branch.weights):
                    named["%s.w%d" % (base, j)] = w
                named[base + ".b"] = branch.bias
        return named


def init_conv_branch(rng, kernel, in_dim, out_dim):
    weights = [glorot(rng, kernel * in_dim, out_dim, (in_dim, out_dim))
               for _ in range(kernel)]
    return ConvBranchParams(kernel, weights, Tensor(np.zeros(out_dim), requires_grad=True))


def init_cnn_stack(rng, in_dim, channels, branch_channels):
    if 3 * branch_channels != channels:
        raise T.ConfigError(
            "layer-2 branches (3 x %d) must concatenate to %d channels"
            % (branch_channels, channels))
    layers = [[init_conv_branch(rng, 1, in_dim, channels)]]
    layers.append([init_conv_branch(rng, k, channels, branch_channels)
                   for k in (2, 3, 4)])
    for _ in range(3):
        layers.append([init_conv_branch(rng, 5, channels, channels)])
    return CnnStackParams(layers)


def _conv_branch(X, branch, n):
    # same padding: floor((k-1)/2) zeros left, ceil((k-1)/2) right
    k = branch.kernel
    left = (k - 1) // 2
    Xp = T.pad_rows(X, left, k - 1 - left) if k > 1 else X
    out = T.matmul(Xp if k == 1 else T.slice_rows(Xp, 0, n), branch.weights[0])
    for j in range(1, k):
        out = T.add(out, T.matmul(T.slice_rows(Xp, j, j + n), branch.weights[j]))
    return T.add(out, branch.bias)


def cnn_stack_forward(E, mask, params):
    """Run the convolution stack; output is n x out_channels."""
    n = E.shape[0]
    mask_col = Tensor(np.asarray(mask, dtype=np.float64).reshape(n, 1))
    X = E
    for layer in params.layers:
        outs = [_conv_branch(X, branch, n) for branch in layer]
        X = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
        X = T.mul(T.relu(X), mask_col)
    return X


def embed_tokens(token_ids, distances, aspect, table, mode="eval", rng=None,
                 dropout_p=0.0):
    """Per-token [word; position] representations plus the aspect query.

    Returns (E, e_a, aspect_word_vec): E is n x (word_dim + pos_dim) with
    embedding-layer dropout in train mode; e_a concatenates the span's mean
    word vector with the distance-0 position embedding; aspect_word_vec is
    the mean word vector alone (used by the extraction branch).
    """
    token_ids = np.asarray(token_ids, dtype=np.intp)
    word_rows = T.take_rows(table.word, token_ids)
    pos_rows = T.take_rows(table.position, np.asarray(distances, dtype=np.intp))
    E = T.concat([word_rows, pos_rows], axis=1)
    E = T.dropout(E, dropout_p, mode, rng)
    span_ids = token_ids[aspect.start:aspect.end]
    aspect_word_vec = T.mean_axis0(T.take_rows(table.word, span_ids))
    e_a = T.concat([aspect_word_vec, T.get_row(table.position, 0)], axis=0)
    return E, e_a, aspect_word_vec
