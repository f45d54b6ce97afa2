"""Independent reference computations shared by unit and acceptance tests."""

import math

import numpy as np

from tracelearn.model import ModelConfig, init_model, loss_and_grad


def shape_count(vocab, hidden, layers, ffn, tied=False):
    """Parameter count from layer shapes, written out longhand."""
    emb = vocab * hidden
    attn = 4 * hidden * hidden          # q, k, v, o
    mlp = hidden * ffn * 2 + ffn * hidden  # gate, up, down
    norms = 2 * hidden
    head = 0 if tied else hidden * vocab
    return emb + layers * (attn + mlp + norms) + hidden + head


def finite_difference_check(n_params=200, seed=0, eps=1e-3):
    """Max relative error between analytic and central-difference gradients (float64)."""
    cfg = ModelConfig(vocab_size=20, hidden_dim=16, n_layers=1, n_heads=2, max_seq_len=16, seed=seed)
    model = init_model(cfg, pad_id=19, eos_id=18, dtype=np.float64)
    rng = np.random.default_rng(seed)
    # larger weights so gradients are not vanishingly small
    for k, p in model.params.items():
        p += rng.standard_normal(p.shape) * 0.3
    batch = rng.integers(0, 18, size=(3, 10))
    batch[0, 7:] = 19
    _, grads = loss_and_grad(model, batch)
    names = list(model.params)
    sizes = np.array([model.params[n].size for n in names])
    worst = 0.0
    for _ in range(n_params):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        p = model.params[name].reshape(-1)
        i = int(rng.integers(p.size))
        old = p[i]
        p[i] = old + eps
        up, _ = loss_and_grad(model, batch, need_grad=False)
        p[i] = old - eps
        down, _ = loss_and_grad(model, batch, need_grad=False)
        p[i] = old
        numeric = (up - down) / (2 * eps)
        analytic = grads[name].reshape(-1)[i]
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def uniform_loss(vocab=37):
    cfg = ModelConfig(vocab_size=vocab, hidden_dim=16, n_layers=1, n_heads=2, max_seq_len=16)
    model = init_model(cfg, pad_id=vocab - 1, dtype=np.float64)
    model.params["lm_head"][:] = 0.0
    batch = np.random.default_rng(0).integers(0, vocab - 1, size=(4, 12))
    loss, _ = loss_and_grad(model, batch, need_grad=False)
    return loss, math.log(vocab)
