"""Time-aware attention network over token-occurrence prefixes.

For occurrence j at time t_j in a prefix cut at time T, with recency
Delta_j = T - t_j:

    phi(Delta_j) = [log(1 + Delta_j / 1h),
                    1{Delta<=6h}, 1{Delta<=24h}, 1{Delta<=7d}, 1{Delta<=30d},
                    1{Delta>30d}]
    a_j     = u . tanh(W E[token_j] + V phi(Delta_j))
    alpha   = softmax(a)                      (over the prefix)
    context = sum_j alpha_j E[token_j]
    p       = sigmoid(W_out context + b_out)  (one output per task code)

Training is mini-batch stochastic gradient descent with per-parameter
adaptive step sizes (accumulated squared-gradient scaling). All gradients are
hand-derived and checked against central finite differences in the test
suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..timeline import PAD_ID, TimelinePrefix
from ..timeunits import HOUR_MS

TIME_FEATURE_DIM = 6
_BUCKET_HOURS = (6.0, 24.0, 168.0, 720.0)


@dataclass
class TannHyperparams:
    d: int = 32
    att_dim: int = 32
    lr: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    max_tokens: int = 512


@dataclass
class TannModel:
    E: np.ndarray  # (vocab, d) token embeddings
    W: np.ndarray  # (att_dim, d) token projection
    V: np.ndarray  # (att_dim, 6) time-feature projection
    u: np.ndarray  # (att_dim,) attention vector
    W_out: np.ndarray  # (n_outputs, d)
    b_out: np.ndarray  # (n_outputs,)
    max_tokens: int = 512
    codes: list[str] = field(default_factory=list)  # non-empty for the diagnoses head

    @property
    def n_outputs(self) -> int:
        return self.W_out.shape[0]

    def predict(self, prefix: TimelinePrefix) -> float | np.ndarray:
        p, _ = self.forward_with_attention(prefix)
        return p

    def forward_with_attention(self, prefix: TimelinePrefix) -> tuple[float | np.ndarray, np.ndarray]:
        """Probability plus the attention weights in prefix order."""
        ids, delta = encode_prefix(prefix, self.max_tokens)
        tokens = ids[None, :]
        mask = np.ones((1, ids.size), dtype=bool)
        p, alpha, _ = _forward(self, tokens, delta[None, :], mask)
        prob = p[0] if self.n_outputs > 1 else float(p[0, 0])
        return prob, alpha[0]

    # gradient-check interface: example is (token_ids, deltas, y)
    def _gc_params(self) -> dict[str, np.ndarray]:
        return {"E": self.E, "W": self.W, "V": self.V, "u": self.u, "W_out": self.W_out, "b_out": self.b_out}

    def _gc_loss(self, example) -> float:
        tokens, delta, mask, y = _gc_example(self, example)
        p, _, _ = _forward(self, tokens, delta, mask)
        return _batch_loss(p, y)

    def _gc_grads(self, example) -> dict[str, np.ndarray]:
        tokens, delta, mask, y = _gc_example(self, example)
        _, _, cache = _forward(self, tokens, delta, mask)
        # _batch_loss averages over outputs via np.mean, matching 1/(B*C) in _backward
        return _backward(self, tokens, mask, y, cache)


def time_features(delta_ms: np.ndarray) -> np.ndarray:
    """phi(Delta): log-recency plus cumulative window indicators."""
    delta_h = np.maximum(delta_ms, 0.0) / HOUR_MS
    feats = np.empty(delta_h.shape + (TIME_FEATURE_DIM,), dtype=float)
    feats[..., 0] = np.log1p(delta_h)
    for i, bucket in enumerate(_BUCKET_HOURS):
        feats[..., 1 + i] = delta_h <= bucket
    feats[..., 5] = delta_h > _BUCKET_HOURS[-1]
    return feats


def encode_prefix(prefix: TimelinePrefix, max_tokens: int) -> tuple[np.ndarray, np.ndarray]:
    """Token ids and recencies, truncated to the most recent max_tokens.

    Only occurrences at or before the prefix cutoff contribute, which is what
    makes every model output independent of post-cutoff data.
    """
    occ = [o for o in prefix.occurrences if o.time <= prefix.prediction_time]
    occ = occ[-max_tokens:]
    ids = np.array([o.token_id for o in occ], dtype=np.int64)
    delta = np.array([float(prefix.prediction_time - o.time) for o in occ], dtype=float)
    return ids, delta


def _forward(model: TannModel, tokens: np.ndarray, delta: np.ndarray, mask: np.ndarray):
    """Batch forward pass over padded (B, L) arrays. Padded positions carry
    zero attention and contribute nothing to the context."""
    B, L = tokens.shape
    if L == 0:
        logits = np.broadcast_to(model.b_out, (B, model.n_outputs)).copy()
        p = _sigmoid(logits)
        return p, np.zeros((B, 0)), {"emb": np.zeros((B, 0, model.E.shape[1])), "phi": np.zeros((B, 0, TIME_FEATURE_DIM)), "h": np.zeros((B, 0, model.u.size)), "alpha": np.zeros((B, 0)), "context": np.zeros((B, model.E.shape[1])), "p": p}
    emb = model.E[tokens]  # (B, L, d)
    phi = time_features(delta)
    pre = emb @ model.W.T + phi @ model.V.T  # (B, L, a)
    h = np.tanh(pre)
    a = h @ model.u  # (B, L)
    a = np.where(mask, a, -np.inf)
    a_max = np.max(a, axis=1, keepdims=True)
    a_max = np.where(np.isfinite(a_max), a_max, 0.0)
    ea = np.where(mask, np.exp(a - a_max), 0.0)
    denom = ea.sum(axis=1, keepdims=True)
    alpha = np.where(denom > 0, ea / np.maximum(denom, 1e-300), 0.0)
    context = np.einsum("bl,bld->bd", alpha, emb)
    logits = context @ model.W_out.T + model.b_out
    p = _sigmoid(logits)
    cache = {"emb": emb, "phi": phi, "h": h, "alpha": alpha, "context": context, "p": p}
    return p, alpha, cache


def _backward(model: TannModel, tokens, mask, y, cache) -> dict[str, np.ndarray]:
    """Mean binary cross-entropy gradient over the batch (and over outputs
    for the multi-label head)."""
    B, L = tokens.shape
    p, alpha, emb, phi, h = cache["p"], cache["alpha"], cache["emb"], cache["phi"], cache["h"]
    C = model.n_outputs
    dlogits = (p - y) / (B * C)  # (B, C)
    grads = {
        "W_out": dlogits.T @ cache["context"],
        "b_out": dlogits.sum(axis=0),
        "E": np.zeros_like(model.E),
        "W": np.zeros_like(model.W),
        "V": np.zeros_like(model.V),
        "u": np.zeros_like(model.u),
    }
    if L == 0:
        return grads
    dcontext = dlogits @ model.W_out  # (B, d)
    dalpha = np.einsum("bd,bld->bl", dcontext, emb)
    da = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    grads["u"] = np.einsum("bla,bl->a", h, da)
    dh = da[..., None] * model.u
    dpre = dh * (1.0 - h * h)
    grads["W"] = np.einsum("bla,bld->ad", dpre, emb)
    grads["V"] = np.einsum("bla,blf->af", dpre, phi)
    demb = alpha[..., None] * dcontext[:, None, :] + dpre @ model.W
    flat_tokens = tokens[mask]
    np.add.at(grads["E"], flat_tokens, demb[mask])
    return grads


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _batch_loss(p: np.ndarray, y: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(p, eps, 1 - eps)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def init_tann(vocab_size: int, hp: TannHyperparams, n_outputs: int = 1, base_rate=None) -> TannModel:
    rng = np.random.default_rng(hp.seed)
    d, a = hp.d, hp.att_dim
    b_out = np.zeros(n_outputs)
    if base_rate is not None:
        rate = np.clip(np.asarray(base_rate, dtype=float), 1e-6, 1 - 1e-6)
        b_out = np.log(rate / (1 - rate)) * np.ones(n_outputs)
    model = TannModel(
        E=rng.normal(0.0, 0.1, size=(vocab_size, d)),
        W=rng.normal(0.0, 1.0 / np.sqrt(d), size=(a, d)),
        V=rng.normal(0.0, 0.3, size=(a, TIME_FEATURE_DIM)),
        u=rng.normal(0.0, 1.0 / np.sqrt(a), size=a),
        W_out=rng.normal(0.0, 0.01, size=(n_outputs, d)),
        b_out=b_out,
        max_tokens=hp.max_tokens,
    )
    model.E[PAD_ID] = 0.0
    return model


def _pad_batch(encoded: list[tuple[np.ndarray, np.ndarray]], idx: np.ndarray):
    lens = [encoded[i][0].size for i in idx]
    L = max(lens) if lens else 0
    B = len(idx)
    tokens = np.full((B, L), PAD_ID, dtype=np.int64)
    delta = np.zeros((B, L), dtype=float)
    mask = np.zeros((B, L), dtype=bool)
    for row, i in enumerate(idx):
        ids, dl = encoded[i]
        tokens[row, : ids.size] = ids
        delta[row, : ids.size] = dl
        mask[row, : ids.size] = True
    return tokens, delta, mask


def _adagrad_step(params: dict, grads: dict, caches: dict, lr: float, eps: float = 1e-8):
    for name, g in grads.items():
        caches[name] += g * g
        params[name] -= lr * g / (np.sqrt(caches[name]) + eps)


def train_tann(
    prefixes: list[TimelinePrefix],
    labels: np.ndarray,
    vocab_size: int,
    hp: TannHyperparams | None = None,
) -> tuple[TannModel, list[float]]:
    """Train the binary head; returns the model and per-epoch mean loss."""
    hp = hp or TannHyperparams()
    y = np.asarray(labels, dtype=float).reshape(-1, 1)
    if y.min() == y.max():
        raise ValueError("degenerate labels")
    model = init_tann(vocab_size, hp, n_outputs=1, base_rate=float(y.mean()))
    losses = _fit(model, prefixes, y, hp)
    return model, losses


def train_diagnoses_head(
    prefixes: list[TimelinePrefix],
    code_sets: list[frozenset[str]],
    vocab_size: int,
    min_count: int = 5,
    hp: TannHyperparams | None = None,
) -> tuple[TannModel, list[str], list[str]]:
    """Multi-label head sharing the attention context: one sigmoid output per
    code with training frequency >= min_count. Rarer codes are excluded from
    both training and metrics; the excluded list is returned for the run
    report."""
    hp = hp or TannHyperparams()
    counts: dict[str, int] = {}
    for codes in code_sets:
        for c in codes:
            counts[c] = counts.get(c, 0) + 1
    kept = sorted(c for c, n in counts.items() if n >= min_count)
    excluded = sorted(c for c, n in counts.items() if n < min_count)
    if not kept:
        raise ValueError("no code reaches min_count")
    code_idx = {c: i for i, c in enumerate(kept)}
    y = np.zeros((len(code_sets), len(kept)), dtype=float)
    for row, codes in enumerate(code_sets):
        for c in codes:
            if c in code_idx:
                y[row, code_idx[c]] = 1.0
    rates = np.clip(y.mean(axis=0), 1e-6, 1 - 1e-6)
    model = init_tann(vocab_size, hp, n_outputs=len(kept), base_rate=rates)
    model.codes = kept
    _fit(model, prefixes, y, hp)
    return model, kept, excluded


def _fit(model: TannModel, prefixes, y: np.ndarray, hp: TannHyperparams) -> list[float]:
    encoded = [encode_prefix(p, hp.max_tokens) for p in prefixes]
    rng = np.random.default_rng(hp.seed + 1)
    params = {"E": model.E, "W": model.W, "V": model.V, "u": model.u, "W_out": model.W_out, "b_out": model.b_out}
    caches = {k: np.zeros_like(v) for k, v in params.items()}
    n = len(encoded)
    losses = []
    for _epoch in range(hp.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            tokens, delta, mask = _pad_batch(encoded, idx)
            p, _alpha, cache = _forward(model, tokens, delta, mask)
            yb = y[idx]
            epoch_loss += _batch_loss(p, yb) * len(idx)
            grads = _backward(model, tokens, mask, yb, cache)
            _adagrad_step(params, grads, caches, hp.lr)
        losses.append(epoch_loss / n)
    return losses


# gradient-check interface ---------------------------------------------------


def _gc_example(model: TannModel, example):
    ids, delta, y = example
    tokens = np.asarray(ids, dtype=np.int64)[None, :]
    delta = np.asarray(delta, dtype=float)[None, :]
    mask = np.ones_like(tokens, dtype=bool)
    yarr = np.asarray(y, dtype=float).reshape(1, model.n_outputs)
    return tokens, delta, mask, yarr


@dataclass
class PerModalityTann:
    """One TANN per resource type, combined by mean probability. Used by the
    per-modality attribution view of the case-study reports."""

    members: dict[str, TannModel]

    def predict(self, prefix: TimelinePrefix) -> float:
        probs = []
        for modality, model in sorted(self.members.items()):
            sub = TimelinePrefix(
                patient_id=prefix.patient_id,
                occurrences=[o for o in prefix.occurrences if o.source_resource_type == modality],
                prediction_time=prefix.prediction_time,
            )
            probs.append(model.predict(sub))
        return float(np.mean(probs))


def split_by_modality(prefixes: list[TimelinePrefix]) -> dict[str, list[TimelinePrefix]]:
    modalities = sorted({o.source_resource_type for p in prefixes for o in p.occurrences})
    out = {}
    for m in modalities:
        out[m] = [
            TimelinePrefix(
                patient_id=p.patient_id,
                occurrences=[o for o in p.occurrences if o.source_resource_type == m],
                prediction_time=p.prediction_time,
            )
            for p in prefixes
        ]
    return out


def train_per_modality(
    prefixes: list[TimelinePrefix],
    labels: np.ndarray,
    vocab_size: int,
    hp: TannHyperparams | None = None,
) -> PerModalityTann:
    members = {}
    for modality, subs in split_by_modality(prefixes).items():
        model, _ = train_tann(subs, labels, vocab_size, hp)
        members[modality] = model
    return PerModalityTann(members=members)
