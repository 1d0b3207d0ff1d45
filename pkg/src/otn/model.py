"""The joint model: attention-based sentiment branch, CNN tagging branch,
and the two cross-task transmission mechanisms.

Tag predictions are reshaped into an auxiliary attention over the sentence
and pooled into the sentiment classifier (tagger-to-classifier); the
attention layer's per-token features are concatenated into the tagger's
token representations (classifier-to-tagger). With both mechanisms disabled
the forward pass reduces exactly to the two standalone base branches.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor, ConfigError
from . import encoders
from .data import EmbeddingTable, Vocabulary, position_distances

CHECKPOINT_VERSION = 1

N_SENTIMENTS = 3
N_TAGS = 3


@dataclass
class ModelConfig:
    """Architecture switches and widths.

    Defaults follow the benchmark setup: 300-d frozen word vectors, 100-d
    trainable position vectors, 400-wide BiLSTM (200 per direction), 600 CNN
    channels with 3 x 200 branches in layer 2, and a 300-wide tagging MLP.
    """
    enable_aowe2alsc: bool = True
    enable_alsc2aowe: bool = True
    enable_alsc_task: bool = True
    enable_aowe_task: bool = True
    word_dim: int = 300
    pos_dim: int = 100
    hidden: int = 400
    cnn_channels: int = 600
    cnn_branch_channels: int = 200
    mlp_hidden: int = 300
    max_position: int = 128
    dropout: float = 0.5

    def validate(self):
        if not (self.enable_alsc_task or self.enable_aowe_task):
            raise ConfigError("at least one task must be enabled")
        if self.hidden % 2:
            raise ConfigError("hidden width must be even")
        if 3 * self.cnn_branch_channels != self.cnn_channels:
            raise ConfigError("cnn_branch_channels must be cnn_channels / 3")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        return self

    @property
    def emb_dim(self):
        return self.word_dim + self.pos_dim

    @property
    def aowe_in_dim(self):
        base = self.cnn_channels + self.word_dim
        return base + self.hidden if self.enable_alsc2aowe else base


class OtnParams:
    """All trainable parameters of both branches and both transmissions.

    named_parameters() exposes every trainable tensor (including the
    position-embedding table) under a stable name; the frozen word matrix is
    excluded.
    """

    def __init__(self, config, table, rng):
        config.validate()
        if table.word_dim != config.word_dim or table.pos_dim != config.pos_dim:
            raise ConfigError(
                "embedding table dims (%d, %d) do not match config (%d, %d)"
                % (table.word_dim, table.pos_dim, config.word_dim, config.pos_dim))
        self.config = config
        self.table = table
        emb, hid = config.emb_dim, config.hidden

        self.bilstm = encoders.init_bilstm(rng, emb, hid)
        self.cnn = encoders.init_cnn_stack(rng, emb, config.cnn_channels,
                                           config.cnn_branch_channels)
        # attention: features W_e [e_i; e_a], scores v_u . tanh(feat + b_u)
        self.attn_w = encoders.glorot(rng, 2 * emb, hid, (hid, 2 * emb))
        self.attn_b = Tensor(np.zeros(hid), requires_grad=True)
        self.attn_v = encoders.glorot(rng, hid, 1, (hid,))
        # sentiment classifiers: base (pooled context only) and joint
        # (pooled context + opinion summary); widths differ so the weights
        # are separate
        self.alsc_base_w = encoders.glorot(rng, hid, N_SENTIMENTS, (N_SENTIMENTS, hid))
        self.alsc_base_b = Tensor(np.zeros(N_SENTIMENTS), requires_grad=True)
        self.alsc_joint_w = encoders.glorot(rng, 2 * hid, N_SENTIMENTS,
                                            (N_SENTIMENTS, 2 * hid))
        self.alsc_joint_b = Tensor(np.zeros(N_SENTIMENTS), requires_grad=True)
        # tagging MLP: softmax(W_o1 relu(W_o2 r) + b_o)
        d_in = config.aowe_in_dim
        self.aowe_w2 = encoders.glorot(rng, d_in, config.mlp_hidden,
                                       (config.mlp_hidden, d_in))
        self.aowe_w1 = encoders.glorot(rng, config.mlp_hidden, N_TAGS,
                                       (N_TAGS, config.mlp_hidden))
        self.aowe_b = Tensor(np.zeros(N_TAGS), requires_grad=True)
        # tag probabilities -> single opinion score per token
        self.trans_w = encoders.glorot(rng, N_TAGS, 1, (N_TAGS, 1))

    def named_parameters(self):
        named = {"embed.position": self.table.position}
        named.update(self.bilstm.named_parameters())
        cfg = self.config
        need_aowe_head = cfg.enable_aowe_task or (cfg.enable_alsc_task
                                                  and cfg.enable_aowe2alsc)
        need_attention = cfg.enable_alsc_task or (need_aowe_head
                                                  and cfg.enable_alsc2aowe)
        if need_attention:
            named.update({
                "attn.w": self.attn_w,
                "attn.b": self.attn_b,
                "attn.v": self.attn_v,
            })
        if cfg.enable_alsc_task:
            if cfg.enable_aowe2alsc:
                named["alsc.joint.w"] = self.alsc_joint_w
                named["alsc.joint.b"] = self.alsc_joint_b
                named["trans.w"] = self.trans_w
            else:
                named["alsc.base.w"] = self.alsc_base_w
                named["alsc.base.b"] = self.alsc_base_b
        if need_aowe_head:
            named.update(self.cnn.named_parameters())
            named.update({
                "aowe.w2": self.aowe_w2,
                "aowe.w1": self.aowe_w1,
                "aowe.b": self.aowe_b,
            })
        return named

    def zero_grad(self):
        for t in self.named_parameters().values():
            t.zero_grad()

    def copy_values(self):
        return {name: t.data.copy() for name, t in self.named_parameters().items()}

    def load_values(self, values):
        for name, t in self.named_parameters().items():
            if t.data.shape != values[name].shape:
                raise ConfigError("checkpoint tensor %s has shape %s, expected %s"
                                  % (name, values[name].shape, t.data.shape))
            t.data[...] = values[name]


# ---------------------------------------------------------------------------
# model operations


def alsc_attention(E, e_a, params, mask):
    """Aspect-query attention over the sentence.

    Per token: feature h_i = W [e_i; e_a]; score u_i = v . tanh(h_i + b);
    weights are the masked softmax of u. Returns (alpha, Hatt) with Hatt the
    n x hidden feature matrix, reused by the classifier-to-tagger channel.
    """
    n = E.shape[0]
    EA = T.concat([E, T.tile_rows(e_a, n)], axis=1)
    Hatt = T.matmul(EA, _transpose(params.attn_w))
    u = T.matmul(T.tanh(T.add(Hatt, params.attn_b)), params.attn_v)
    alpha = T.softmax(u, mask=mask)
    return alpha, Hatt


def _transpose(w):
    """Differentiable transpose of a weight matrix."""
    out = Tensor(w.data.T.copy(), requires_grad=w.requires_grad)

    def pull(g):
        T._accumulate(w, g.T)

    tape = T.active_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, pull)
    return out


def alsc_context_pool(H, weights):
    """Weighted sum of context rows; weights must sum to 1."""
    if abs(float(np.sum(weights.data)) - 1.0) > 1e-9:
        raise ConfigError("pooling weights must sum to 1")
    return T.matmul(weights, H)


def aowe_word_repr(C, aspect_word_vec):
    """Concatenate each CNN feature row with the aspect's word vector."""
    return T.concat([C, T.tile_rows(aspect_word_vec, C.shape[0])], axis=1)


def alsc2aowe_enrich(R, Hatt):
    """Append the attention-layer features to each token representation."""
    if R.shape[0] != Hatt.shape[0]:
        raise T.DimensionError("row counts differ: %d vs %d"
                               % (R.shape[0], Hatt.shape[0]))
    return T.concat([R, Hatt], axis=1)


def aowe_classify(R, params, mode="eval", rng=None):
    """Per-token tag distribution: softmax(W1 relu(W2 r) + b)."""
    if R.shape[1] != params.aowe_w2.shape[1]:
        raise T.DimensionError(
            "token representation width %d does not match classifier input %d"
            % (R.shape[1], params.aowe_w2.shape[1]))
    R = T.dropout(R, params.config.dropout, mode, rng)
    hidden = T.relu(T.matmul(R, _transpose(params.aowe_w2)))
    logits = T.add(T.matmul(hidden, _transpose(params.aowe_w1)), params.aowe_b)
    return T.softmax_rows(logits)


def aowe2alsc_attention(Yhat, trans_w, mask, H):
    """Turn tag distributions into an opinion attention and pool the context.

    Scores are Yhat . w (one per token); p is their masked softmax;
    the opinion summary is p . H.
    """
    scores = T.matmul(Yhat, trans_w)  # n x 1
    p = T.softmax(_flatten_col(scores), mask=mask)
    return p, T.matmul(p, H)


def _flatten_col(t):
    """View an n x 1 tensor as a vector."""
    out = Tensor(t.data.reshape(-1), requires_grad=t.requires_grad)

    def pull(g):
        T._accumulate(t, g.reshape(t.data.shape))

    tape = T.active_tape()
    if tape is not None and out.requires_grad:
        tape._record(out, pull)
    return out


def alsc_classify(r_a, r_opinion, params, mode="eval", rng=None):
    """Sentiment distribution from the pooled context, optionally joined
    with the opinion summary. Output-layer dropout hits the pre-classifier
    representation in train mode."""
    if r_opinion is not None:
        rep = T.concat([r_a, r_opinion], axis=0)
        w, b = params.alsc_joint_w, params.alsc_joint_b
    else:
        rep = r_a
        w, b = params.alsc_base_w, params.alsc_base_b
    rep = T.dropout(rep, params.config.dropout, mode, rng)
    return T.softmax(T.add(T.matmul(w, rep), b))


@dataclass
class ForwardResult:
    alsc_probs: object = None   # Tensor(3) or None
    aowe_probs: object = None   # Tensor(n x 3) or None
    alpha: object = None        # Tensor(n) or None
    p: object = None            # Tensor(n) or None


def forward_joint(token_ids, distances, aspect, params, config=None,
                  mode="eval", rng=None, mask=None,
                  want_alsc=None, want_aowe=None):
    """Full forward pass for one (sentence, aspect) instance.

    want_alsc / want_aowe restrict which heads are evaluated (defaulting to
    the config's task flags); a head needed only to feed the other task is
    still computed internally but not returned.
    """
    config = config or params.config
    config.validate()
    n = len(token_ids)
    if mask is None:
        mask = np.ones(n, dtype=bool)
    want_alsc = config.enable_alsc_task if want_alsc is None else want_alsc
    want_aowe = config.enable_aowe_task if want_aowe is None else want_aowe
    want_alsc = want_alsc and config.enable_alsc_task
    want_aowe = want_aowe and config.enable_aowe_task

    need_aowe_head = want_aowe or (want_alsc and config.enable_aowe2alsc)
    need_attention = want_alsc or (need_aowe_head and config.enable_alsc2aowe)

    E, e_a, aspect_word = encoders.embed_tokens(
        token_ids, distances, aspect, params.table, mode, rng, config.dropout)

    H = encoders.bilstm_forward(E, mask, params.bilstm) if want_alsc else None
    alpha = Hatt = None
    if need_attention:
        alpha, Hatt = alsc_attention(E, e_a, params, mask)

    aowe_probs = None
    if need_aowe_head:
        C = encoders.cnn_stack_forward(E, mask, params.cnn)
        R = aowe_word_repr(C, aspect_word)
        if config.enable_alsc2aowe:
            R = alsc2aowe_enrich(R, Hatt)
        aowe_probs = aowe_classify(R, params, mode, rng)

    alsc_probs = p = None
    if want_alsc:
        r_a = alsc_context_pool(H, alpha)
        if config.enable_aowe2alsc:
            p, r_opinion = aowe2alsc_attention(aowe_probs, params.trans_w, mask, H)
            alsc_probs = alsc_classify(r_a, r_opinion, params, mode, rng)
        else:
            alsc_probs = alsc_classify(r_a, None, params, mode, rng)

    return ForwardResult(alsc_probs=alsc_probs,
                         aowe_probs=aowe_probs if want_aowe else None,
                         alpha=alpha, p=p)


def forward_base_alsc(token_ids, distances, aspect, params, mode="eval", rng=None,
                      mask=None):
    """Standalone base sentiment branch (no transmissions)."""
    config = params.config
    n = len(token_ids)
    if mask is None:
        mask = np.ones(n, dtype=bool)
    E, e_a, _ = encoders.embed_tokens(
        token_ids, distances, aspect, params.table, mode, rng, config.dropout)
    H = encoders.bilstm_forward(E, mask, params.bilstm)
    alpha, _ = alsc_attention(E, e_a, params, mask)
    r_a = alsc_context_pool(H, alpha)
    return alsc_classify(r_a, None, params, mode, rng), alpha


def forward_base_aowe(token_ids, distances, aspect, params, mode="eval", rng=None,
                      mask=None):
    """Standalone base extraction branch (no transmissions)."""
    config = params.config
    n = len(token_ids)
    if mask is None:
        mask = np.ones(n, dtype=bool)
    E, _, aspect_word = encoders.embed_tokens(
        token_ids, distances, aspect, params.table, mode, rng, config.dropout)
    C = encoders.cnn_stack_forward(E, mask, params.cnn)
    R = aowe_word_repr(C, aspect_word)
    return aowe_classify(R, params, mode, rng)


def forward_instance(instance, vocab, params, mode="eval", rng=None,
                     want_alsc=None, want_aowe=None):
    """Convenience wrapper: encode an instance's tokens and run the model."""
    token_ids = vocab.encode(instance.tokens)
    distances = position_distances(len(instance.tokens), instance.aspect,
                                   params.table.max_position)
    return forward_joint(token_ids, distances, instance.aspect, params,
                         mode=mode, rng=rng,
                         want_alsc=want_alsc, want_aowe=want_aowe)


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, params, vocab, extra=None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "vocab": vocab.tokens,
        "extra": extra or {},
    }
    arrays = {"param/" + name: t.data
              for name, t in params.named_parameters().items()}
    arrays["frozen/word"] = params.table.word.data
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path):
    """Rebuild (params, vocab, extra) from a checkpoint file."""
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError("unsupported checkpoint version %r" % meta.get("version"))
        config = ModelConfig(**meta["config"])
        vocab = Vocabulary(meta["vocab"][2:])
        word = archive["frozen/word"]
        position = archive["param/embed.position"]
        if word.shape[0] != len(vocab):
            raise ConfigError("checkpoint vocabulary (%d tokens) does not match "
                              "its word matrix (%d rows)" % (len(vocab), word.shape[0]))
        table = EmbeddingTable(Tensor(word, requires_grad=False),
                               Tensor(position, requires_grad=True),
                               config.max_position)
        params = OtnParams(config, table, np.random.default_rng(0))
        values = {name[len("param/"):]: archive[name]
                  for name in archive.files if name.startswith("param/")}
        params.load_values(values)
    return params, vocab, meta["extra"]
