import numpy as np
import pytest

from otn import data as D
from otn import model as M
from otn import synthetic
from otn.tensor import Tensor

TINY = dict(word_dim=6, pos_dim=3, hidden=8, cnn_channels=6,
            cnn_branch_channels=2, mlp_hidden=5, max_position=16, dropout=0.0)


def tiny_config(**overrides):
    kw = dict(TINY)
    kw.update(overrides)
    return M.ModelConfig(**kw)


def make_setup(seed=0, n_examples=6, boost=None, **cfg_overrides):
    """Tiny model + synthetic instances for fast structural tests.

    boost, when set, redraws every trainable weight from U(-boost, boost);
    used where vanishing activations would put gradients under the
    finite-difference noise floor.
    """
    rng = np.random.default_rng(seed)
    cfg = tiny_config(**cfg_overrides)
    examples = synthetic.generate_examples(n_examples, rng)
    alsc = synthetic.to_alsc(examples)
    aowe = synthetic.to_aowe(examples)
    vocab = D.build_vocab(alsc, aowe)
    word = rng.uniform(-1.0, 1.0, (len(vocab), cfg.word_dim))
    word[D.PAD] = 0.0
    table = D.EmbeddingTable(
        Tensor(word),
        Tensor(rng.uniform(-0.5, 0.5, (cfg.max_position, cfg.pos_dim)),
               requires_grad=True),
        cfg.max_position)
    params = M.OtnParams(cfg, table, rng)
    if boost is not None:
        for t in params.named_parameters().values():
            t.data[...] = rng.uniform(-boost, boost, t.data.shape)
    return cfg, params, vocab, alsc, aowe


@pytest.fixture
def tiny_setup():
    return make_setup()
