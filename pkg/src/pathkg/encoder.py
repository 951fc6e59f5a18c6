"""Path sequences and the shared ReLU recurrent encoder.

A path ``r1 -e1-> r2 -e2-> ... rn`` becomes the sequence
``[r1, conv(e1, r2), r2, conv(e2, r3), ..., rn]`` of ``2n - 1`` vectors.  The
encoder starts from the first element and folds in the rest with
``h_t = relu(W_h h_{t-1} + W_i x_t)``; a single-relation path is returned
unchanged.  There are no bias terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .converter import EntityConverter
from .kg import TypeSystem
from .model import EncoderParams, Gradients, ModelParams
from .paths import GroundedPath


@dataclass
class PathSequence:
    elements: np.ndarray
    n: int
    sources: list[tuple]
    provenance: list[tuple]

    def parameter_tags(self) -> set:
        return {tag for tags in self.provenance for tag in tags}


@dataclass
class SequenceGrad:
    W_h: np.ndarray
    W_i: np.ndarray
    elements: np.ndarray
    scale: float = 1.0


def _as_converter(mode, types) -> EntityConverter:
    if isinstance(mode, EntityConverter):
        return mode
    return EntityConverter(str(mode).lower().replace("_type_attention", "").replace("_projection", ""), types)


def build_path_sequence(path: GroundedPath, params: ModelParams, mode, types: TypeSystem | None = None
                        ) -> PathSequence:
    """``mode`` is ``'ec1'``/``'ec2'`` or a ready :class:`EntityConverter`."""
    converter = _as_converter(mode, types)
    rels, ents = path.relations, path.entities
    elements = [params.relation[rels[0]].copy()]
    sources = [("relation", rels[0])]
    provenance = [(("relation", rels[0]),)]
    for e, r in zip(ents, rels[1:]):
        elements.append(converter.convert(params, e, r))
        sources.append(("converted", e, r))
        provenance.append(converter.tags(e, r))
        elements.append(params.relation[r].copy())
        sources.append(("relation", r))
        provenance.append((("relation", r),))
    return PathSequence(np.stack(elements), len(rels), sources, provenance)


def rnn_forward(X: np.ndarray, W_h: np.ndarray, W_i: np.ndarray):
    """Encode a batch ``X`` of shape ``(B, L, k)``; returns ``(outputs, cache)``."""
    h = X[:, 0].copy()
    hidden, pre = [h], []
    for t in range(1, X.shape[1]):
        a = h @ W_h.T + X[:, t] @ W_i.T
        h = np.maximum(a, 0.0)
        pre.append(a)
        hidden.append(h)
    return h, (hidden, pre)


def rnn_backward(X: np.ndarray, cache, W_h: np.ndarray, W_i: np.ndarray, G: np.ndarray,
                 clip: float | None = None):
    """Backpropagation through time for :func:`rnn_forward`.

    Returns ``(dX, dW_h, dW_i, scale)``.  With ``clip`` set, each path's
    gradient (w.r.t. its elements and both matrices) is rescaled to global
    norm at most ``clip``; ``scale`` holds the per-path factors.
    """
    hidden, pre = cache
    B, L, k = X.shape
    dX = np.zeros_like(X)
    dA = np.zeros((B, L - 1, k))
    dh = G
    for t in range(L - 1, 0, -1):
        da = dh * (pre[t - 1] > 0)
        dA[:, t - 1] = da
        dX[:, t] = da @ W_i
        dh = da @ W_h
    dX[:, 0] = dh

    h_prev = np.stack(hidden[:-1], axis=1) if L > 1 else np.zeros((B, 0, k))
    x_in = X[:, 1:]
    scale = np.ones(B)
    if clip is not None:
        sq = (dX * dX).sum(axis=(1, 2))
        if L > 1:
            gram_a = np.einsum("bsk,btk->bst", dA, dA)
            sq += (gram_a * np.einsum("bsk,btk->bst", h_prev, h_prev)).sum(axis=(1, 2))
            sq += (gram_a * np.einsum("bsk,btk->bst", x_in, x_in)).sum(axis=(1, 2))
        norm = np.sqrt(sq)
        scale = np.where(norm > clip, clip / np.maximum(norm, 1e-300), 1.0)
        dA *= scale[:, None, None]
        dX *= scale[:, None, None]
    dW_h = np.einsum("btk,btj->kj", dA, h_prev)
    dW_i = np.einsum("btk,btj->kj", dA, x_in)
    return dX, dW_h, dW_i, scale


def encode_path(seq: PathSequence, enc: EncoderParams) -> np.ndarray:
    out, _ = rnn_forward(seq.elements[None], enc.W_h, enc.W_i)
    return out[0]


def encode_backward(seq: PathSequence, enc: EncoderParams, upstream_grad, clip: float | None = None
                    ) -> SequenceGrad:
    X = seq.elements[None]
    _, cache = rnn_forward(X, enc.W_h, enc.W_i)
    G = np.asarray(upstream_grad, dtype=np.float64)[None]
    dX, dW_h, dW_i, scale = rnn_backward(X, cache, enc.W_h, enc.W_i, G, clip)
    return SequenceGrad(dW_h, dW_i, dX[0], float(scale[0]))


def route_sequence_grad(seq: PathSequence, grad: SequenceGrad, params: ModelParams,
                        converter: EntityConverter, out: Gradients | None = None) -> Gradients:
    """Push element gradients back onto the embedding tables named by ``seq.sources``."""
    out = out if out is not None else Gradients()
    out.add_dense("W_h", grad.W_h)
    out.add_dense("W_i", grad.W_i)
    for src, g in zip(seq.sources, grad.elements):
        if src[0] == "relation":
            out.add_rows("relation", [src[1]], g[None])
        else:
            _, e, r = src
            converter.backward(params, np.array([e]), np.array([r]), g[None], out)
    return out


class PathBatch:
    """Encode many grounded paths at once, grouped by length."""

    def __init__(self, paths, params: ModelParams, converter: EntityConverter):
        self.params = params
        self.converter = converter
        self.size = len(paths)
        self.outputs = np.zeros((self.size, params.k))
        enc = params.encoder
        by_len: dict[int, list[int]] = {}
        for i, p in enumerate(paths):
            by_len.setdefault(len(p.relations), []).append(i)
        self.groups = []
        for n in sorted(by_len):
            idx = np.array(by_len[n], dtype=np.int64)
            rels = np.array([paths[i].relations for i in idx], dtype=np.int64).reshape(len(idx), n)
            ents = np.array([paths[i].entities for i in idx], dtype=np.int64).reshape(len(idx), n - 1)
            X = np.empty((len(idx), 2 * n - 1, params.k))
            X[:, 0::2] = params.relation[rels]
            if n > 1:
                conv = converter.forward(params, ents.ravel(), rels[:, 1:].ravel())
                X[:, 1::2] = conv.reshape(len(idx), n - 1, params.k)
            out, cache = rnn_forward(X, enc.W_h, enc.W_i)
            self.outputs[idx] = out
            self.groups.append((idx, rels, ents, X, cache))

    def backward(self, G: np.ndarray, grads: Gradients, clip: float | None = None):
        """Accumulate parameter gradients given ``dLoss/d outputs`` ``G`` of shape ``(size, k)``."""
        params, enc, k = self.params, self.params.encoder, self.params.k
        for idx, rels, ents, X, cache in self.groups:
            g = G[idx]
            live = np.flatnonzero(np.any(g != 0, axis=1))
            if live.size == 0:
                continue
            if live.size < len(idx):
                hidden, pre = cache
                cache = ([h[live] for h in hidden], [a[live] for a in pre])
                g, rels, ents, X = g[live], rels[live], ents[live], X[live]
            dX, dW_h, dW_i, _ = rnn_backward(X, cache, enc.W_h, enc.W_i, g, clip)
            n = rels.shape[1]
            grads.add_rows("relation", rels.ravel(), dX[:, 0::2].reshape(-1, k))
            if n > 1:
                self.converter.backward(params, ents.ravel(), rels[:, 1:].ravel(),
                                        dX[:, 1::2].reshape(-1, k), grads)
                grads.add_dense("W_h", dW_h)
                grads.add_dense("W_i", dW_i)
