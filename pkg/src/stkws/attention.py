"""Temporally pooled multi-head attention.

The time-averaged input forms a single query per head; keys and values are
the per-frame projections through the *same* matrix.  The heads are
column slices of one ``(D_u, D)`` weight and their outputs are concatenated,
so a ``(T, D_u)`` sequence reduces to one ``D``-vector.
"""

from __future__ import annotations

import numpy as np

from .autograd import Module, Parameter, Tensor, matmul, softmax, tensor
from .exceptions import ShapeError
from .layers import avg_pool_time


def scaled_dot_product_attention(q, k, v) -> Tensor:
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes.

    ``q`` is ``(..., T_q, d_k)``, ``k`` is ``(..., T, d_k)`` and ``v`` is ``(..., T, d_v)``.
    """
    q, k, v = tensor(q), tensor(k), tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * scale
    return matmul(softmax(scores, axis=-1), v)


class PooledAttention(Module):
    """Multi-head temporally pooled attention with a shared query/key/value projection.

    Parameters
    ----------
    in_features : int
        Input channel width ``D_u``.
    out_features : int
        Output width ``D``; must be divisible by ``heads``.
    heads : int
        Number of heads ``n``; head ``i`` uses columns ``[i*D/n, (i+1)*D/n)``.
    """

    def __init__(self, in_features: int, out_features: int | None = None, heads: int = 5,
                 rng=None, dtype=np.float64):
        super().__init__()
        out_features = in_features if out_features is None else out_features
        if heads < 1 or out_features % heads:
            raise ShapeError(f"output width {out_features} is not divisible by {heads} heads")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.heads = heads
        limit = np.sqrt(6.0 / (in_features + out_features))
        self.weight = Parameter(rng.uniform(-limit, limit, (in_features, out_features)).astype(dtype))

    @property
    def head_dim(self) -> int:
        return self.weight.shape[1] // self.heads

    def head_weight(self, i: int) -> Tensor:
        """Detached copy of head ``i``'s ``(D_u, D/n)`` projection."""
        d = self.head_dim
        return Tensor(self.weight.data[:, i * d:(i + 1) * d])

    def _check(self, u: Tensor) -> None:
        if u.ndim not in (2, 3):
            raise ShapeError(f"expected (T, D_u) or (B, T, D_u), got {u.shape}")
        if u.shape[-2] == 0:
            raise ShapeError("pooled attention needs at least one time step")
        if u.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"input width {u.shape[-1]} != projection rows {self.weight.shape[0]}")

    def _scores(self, u: Tensor):
        """Return per-head projections ``(B, n, T, d)`` and softmax weights ``(B, n, 1, T)``."""
        B, T, _ = u.shape
        n, d = self.heads, self.head_dim
        projected = matmul(u, self.weight)                          # (B, T, D): keys == values
        query = matmul(avg_pool_time(u).reshape(B, 1, -1), self.weight)  # (B, 1, D)
        kv = projected.reshape(B, T, n, d).transpose(0, 2, 1, 3)
        q = query.reshape(B, 1, n, d).transpose(0, 2, 1, 3)
        scores = matmul(q, kv.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d))
        return kv, softmax(scores, axis=-1)

    def forward(self, u):
        u = tensor(u)
        self._check(u)
        single = u.ndim == 2
        if single:
            u = u.reshape(1, *u.shape)
        kv, weights = self._scores(u)
        out = matmul(weights, kv).reshape(u.shape[0], -1)           # heads concatenated
        return out.reshape(-1) if single else out

    def attention_weights(self, u) -> np.ndarray:
        """Softmax weights the pooled query puts on each frame: ``(n, T)`` or ``(B, n, T)``."""
        u = tensor(u)
        self._check(u)
        single = u.ndim == 2
        if single:
            u = u.reshape(1, *u.shape)
        _, weights = self._scores(Tensor(u.data))
        w = weights.data[:, :, 0, :]
        return w[0] if single else w


def pooled_attention(u, module: PooledAttention) -> Tensor:
    return module(u)


def attention_weights(u, module: PooledAttention, head: int = 0) -> np.ndarray:
    """Frame weights of a single head for one ``(T, D_u)`` utterance."""
    u = tensor(u)
    if u.ndim != 2:
        raise ShapeError(f"expected a single (T, D_u) utterance, got {u.shape}")
    return module.attention_weights(u)[head]
