"""Triple scoring functions (TransE, RotatE) and the training losses.

Entity tables are real arrays. For RotatE an entity row of width ``2d``
stores the real parts followed by the imaginary parts, and a relation row
stores ``d`` phases, so the relation ``exp(i * theta)`` has unit modulus in
every component by construction.
"""

from __future__ import annotations

import numpy as np

TRANSE = "transe"
ROTATE = "rotate"


def _check_dims(*arrays):
    dims = {np.shape(a)[-1] for a in arrays}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch: {[np.shape(a) for a in arrays]}")


def score_transe(h, r, t):
    """``-||h + r - t||_2`` over the last axis."""
    h, r, t = (np.asarray(x, dtype=float) for x in (h, r, t))
    _check_dims(h, r, t)
    return -np.linalg.norm(h + r - t, axis=-1)


def score_rotate(h, theta, t):
    """``-||h * exp(i theta) - t||_2`` for complex ``h``, ``t`` and real phases."""
    h, t = np.asarray(h, dtype=complex), np.asarray(t, dtype=complex)
    theta = np.asarray(theta, dtype=float)
    _check_dims(h, theta, t)
    return -np.sqrt(np.sum(np.abs(h * np.exp(1j * theta) - t) ** 2, axis=-1))


def to_complex(x):
    x = np.asarray(x)
    d = x.shape[-1] // 2
    return x[..., :d] + 1j * x[..., d:]


def from_complex(z):
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=-1)


def _safe_unit(diff, norm):
    # gradient of the norm is taken as 0 at the origin
    denom = np.where(norm > 0, norm, 1.0)[..., None]
    return np.where(norm[..., None] > 0, diff / denom, 0.0)


class TransE:
    name = TRANSE

    @staticmethod
    def entity_width(dim):
        return dim

    @staticmethod
    def init_tables(rng, n_entities, n_relations, dim):
        bound = 6.0 / np.sqrt(dim)
        ent = rng.uniform(-bound, bound, size=(n_entities, dim))
        rel = rng.uniform(-bound, bound, size=(n_relations, dim))
        return ent, rel

    @staticmethod
    def forward(h, r, t):
        """Scores and gradients of the score w.r.t. ``h``, ``r``, ``t``."""
        diff = h + r - t
        norm = np.linalg.norm(diff, axis=-1)
        unit = _safe_unit(diff, norm)
        return -norm, -unit, -unit, unit

    @staticmethod
    def score_candidates(ent, rel_row, anchor_row, direction):
        if direction == "tail":
            target = anchor_row + rel_row
        else:
            target = anchor_row - rel_row
        return -np.linalg.norm(ent - target, axis=-1)


class RotatE:
    name = ROTATE

    @staticmethod
    def entity_width(dim):
        return 2 * dim

    @staticmethod
    def init_tables(rng, n_entities, n_relations, dim):
        bound = 6.0 / np.sqrt(dim)
        ent = rng.uniform(-bound, bound, size=(n_entities, 2 * dim))
        rel = rng.uniform(0.0, 2 * np.pi, size=(n_relations, dim))
        return ent, rel

    @staticmethod
    def forward(h, theta, t):
        d = theta.shape[-1]
        h_re, h_im = h[..., :d], h[..., d:]
        cos, sin = np.cos(theta), np.sin(theta)
        rot_re = h_re * cos - h_im * sin
        rot_im = h_re * sin + h_im * cos
        diff = np.concatenate([rot_re - t[..., :d], rot_im - t[..., d:]], axis=-1)
        norm = np.linalg.norm(diff, axis=-1)
        g = -_safe_unit(diff, norm)
        g_re, g_im = g[..., :d], g[..., d:]
        grad_h = np.concatenate([g_re * cos + g_im * sin, -g_re * sin + g_im * cos], axis=-1)
        grad_theta = -g_re * rot_im + g_im * rot_re
        return -norm, grad_h, grad_theta, -g

    @staticmethod
    def score_candidates(ent, rel_row, anchor_row, direction):
        d = rel_row.shape[-1]
        anchor = anchor_row[:d] + 1j * anchor_row[d:]
        if direction == "tail":
            target = anchor * np.exp(1j * rel_row)
        else:
            # |h r - t| = |h - t conj(r)| because |r| = 1
            target = anchor * np.exp(-1j * rel_row)
        target = np.concatenate([target.real, target.imag])
        return -np.linalg.norm(ent - target, axis=-1)


MODELS = {TRANSE: TransE, ROTATE: RotatE}


def get_model(kind: str):
    try:
        return MODELS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODELS)}") from None


def hinge_terms(pos_scores, neg_scores, margin):
    """Per-pair ``max(0, f(neg) - f(pos) + margin)``."""
    return np.maximum(0.0, np.asarray(neg_scores) - np.asarray(pos_scores) + margin)


def knowledge_loss(model, ent, rel, positives, negatives, margin):
    """Margin ranking loss summed over positive/negative pairs.

    ``positives`` and ``negatives`` are aligned ``(n, 3)`` index arrays, one
    negative per positive row.
    """
    model = get_model(model) if isinstance(model, str) else model
    positives, negatives = np.asarray(positives), np.asarray(negatives)
    if positives.shape != negatives.shape:
        raise ValueError("one negative must be paired with each positive")
    pos = model.forward(ent[positives[:, 0]], rel[positives[:, 1]], ent[positives[:, 2]])[0]
    neg = model.forward(ent[negatives[:, 0]], rel[negatives[:, 1]], ent[negatives[:, 2]])[0]
    return float(np.sum(hinge_terms(pos, neg, margin)))


def sparse_rows(indices, grads):
    """Sum gradient rows that share an index: ``(unique_indices, summed_rows)``."""
    idx = np.concatenate(indices)
    rows = np.concatenate(grads)
    uniq, inverse = np.unique(idx, return_inverse=True)
    out = np.zeros((len(uniq), rows.shape[1]))
    np.add.at(out, inverse, rows)
    return uniq, out


def knowledge_loss_grad(model, ent, rel, positives, negatives, margin):
    """Loss plus row-sparse gradients w.r.t. the entity and relation tables.

    Returns ``(loss, (ent_idx, ent_grad), (rel_idx, rel_grad))``. The hinge
    subgradient at the kink is 0.
    """
    model = get_model(model) if isinstance(model, str) else model
    ph, pr, pt = np.asarray(positives).T
    nh, nr, nt = np.asarray(negatives).T
    pos, gph, gpr, gpt = model.forward(ent[ph], rel[pr], ent[pt])
    neg, gnh, gnr, gnt = model.forward(ent[nh], rel[nr], ent[nt])
    terms = hinge_terms(pos, neg, margin)
    active = (terms > 0).astype(float)[:, None]
    ent_g = sparse_rows(
        [nh, nt, ph, pt],
        [active * gnh, active * gnt, -active * gph, -active * gpt],
    )
    rel_g = sparse_rows([nr, pr], [active * gnr, -active * gpr])
    return float(terms.sum()), ent_g, rel_g


def alignment_loss(ent_a, ent_b, pairs):
    """Sum of L2 distances between aligned entity vectors."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return 0.0
    if pairs[:, 0].max() >= len(ent_a) or pairs[:, 1].max() >= len(ent_b) or pairs.min() < 0:
        raise IndexError("alignment pair refers to an unknown entity")
    diff = ent_a[pairs[:, 0]] - ent_b[pairs[:, 1]]
    return float(np.sum(np.linalg.norm(diff, axis=-1)))


def alignment_loss_grad(ent_a, ent_b, pairs):
    """Per-pair gradients of the alignment loss: ``(loss, grad_a_rows, grad_b_rows)``."""
    diff = ent_a[pairs[:, 0]] - ent_b[pairs[:, 1]]
    norm = np.linalg.norm(diff, axis=-1)
    unit = _safe_unit(diff, norm)
    return float(norm.sum()), unit, -unit
