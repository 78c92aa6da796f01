"""LSTM over bag-of-token embeddings in consecutive 12-hour windows.

A prefix cut at time T is grouped into windows (T-12h, T], (T-24h, T-12h],
and so on; the input at each step is the mean embedding of the window's
tokens (zero for an empty window). A standard LSTM consumes the windows
oldest-first and the final hidden state feeds a sigmoid head.
Backpropagation-through-time is hand-derived and finite-difference checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..timeline import TimelinePrefix
from ..timeunits import HOUR_MS


@dataclass
class LstmHyperparams:
    d: int = 16
    h: int = 32
    bag_hours: float = 12.0
    lr: float = 0.1
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    max_bags: int = 64


@dataclass
class LstmModel:
    E: np.ndarray  # (vocab, d)
    Wx: np.ndarray  # (4h, d) input-to-gates, stacked [i, f, o, g]
    Wh: np.ndarray  # (4h, h) hidden-to-gates
    b: np.ndarray  # (4h,)
    w_out: np.ndarray  # (h,)
    b_out: float
    bag_hours: float = 12.0
    max_bags: int = 64

    @property
    def hidden(self) -> int:
        return self.Wh.shape[1]

    def predict(self, prefix: TimelinePrefix) -> float:
        bags = bag_prefix(prefix, self.bag_hours, self.max_bags)
        p, _ = _forward(self, _Batch.from_bags([bags]))
        return float(p[0])

    # gradient-check interface: example is (bags, y) with bags a list of id lists
    def _gc_params(self) -> dict[str, np.ndarray]:
        return {"E": self.E, "Wx": self.Wx, "Wh": self.Wh, "b": self.b, "w_out": self.w_out, "b_out": self._b_out_arr}

    @property
    def _b_out_arr(self) -> np.ndarray:
        if not hasattr(self, "_b_out_box"):
            self._b_out_box = np.array([self.b_out], dtype=float)
        return self._b_out_box

    def _sync_b_out(self) -> None:
        if hasattr(self, "_b_out_box"):
            self.b_out = float(self._b_out_box[0])

    def _gc_loss(self, example) -> float:
        bags, y = example
        self._sync_b_out()
        p, _ = _forward(self, _Batch.from_bags([bags]))
        return _bce(p, np.array([float(y)]))

    def _gc_grads(self, example) -> dict[str, np.ndarray]:
        bags, y = example
        self._sync_b_out()
        batch = _Batch.from_bags([bags])
        p, cache = _forward(self, batch)
        grads = _backward(self, batch, np.array([float(y)]), p, cache)
        grads["b_out"] = np.array([grads.pop("b_out_scalar")])
        return grads


def bag_prefix(prefix: TimelinePrefix, bag_hours: float, max_bags: int) -> list[list[int]]:
    """Group occurrence token ids into windows ending at the cutoff, ordered
    oldest-first. Occurrences older than max_bags windows are dropped."""
    bag_ms = bag_hours * HOUR_MS
    by_index: dict[int, list[int]] = {}
    for o in prefix.occurrences:
        if o.time > prefix.prediction_time:
            continue
        k = int((prefix.prediction_time - o.time) // bag_ms)
        if k >= max_bags:
            continue
        by_index.setdefault(k, []).append(o.token_id)
    if not by_index:
        return []
    n_bags = max(by_index) + 1
    return [by_index.get(k, []) for k in range(n_bags - 1, -1, -1)]


class _Batch:
    """Padded bag batch: (B, T) steps right-aligned so the final step is the
    most recent window for every example."""

    def __init__(self, mask, flat_tokens, flat_example, flat_step, counts):
        self.mask = mask  # (B, T)
        self.flat_tokens = flat_tokens
        self.flat_example = flat_example
        self.flat_step = flat_step
        self.counts = counts  # (B, T) divisor, >=1
        self.B, self.T = mask.shape

    @classmethod
    def from_bags(cls, bag_lists: list[list[list[int]]]) -> "_Batch":
        B = len(bag_lists)
        T = max((len(b) for b in bag_lists), default=0)
        mask = np.zeros((B, max(T, 1)), dtype=bool)
        counts = np.ones((B, max(T, 1)), dtype=float)
        toks, exs, steps = [], [], []
        for bi, bags in enumerate(bag_lists):
            offset = T - len(bags)
            for si, bag in enumerate(bags):
                step = offset + si
                mask[bi, step] = True
                if bag:
                    counts[bi, step] = float(len(bag))
                    toks.extend(bag)
                    exs.extend([bi] * len(bag))
                    steps.extend([step] * len(bag))
        return cls(
            mask=mask,
            flat_tokens=np.array(toks, dtype=np.int64),
            flat_example=np.array(exs, dtype=np.int64),
            flat_step=np.array(steps, dtype=np.int64),
            counts=counts,
        )

    def inputs(self, E: np.ndarray) -> np.ndarray:
        x = np.zeros((self.B, self.counts.shape[1], E.shape[1]), dtype=float)
        if self.flat_tokens.size:
            np.add.at(x, (self.flat_example, self.flat_step), E[self.flat_tokens])
        return x / self.counts[..., None]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce(p: np.ndarray, y: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(p, eps, 1 - eps)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def _forward(model: LstmModel, batch: _Batch):
    B, T = batch.B, batch.counts.shape[1]
    H = model.hidden
    x = batch.inputs(model.E)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = {"x": x, "h": [h], "c": [c], "gates": [], "tanh_c": []}
    for t in range(T):
        m = batch.mask[:, t : t + 1].astype(float)
        z = x[:, t] @ model.Wx.T + h @ model.Wh.T + model.b
        zi, zf, zo, zg = np.split(z, 4, axis=1)
        i, f, o = _sigmoid(zi), _sigmoid(zf), _sigmoid(zo)
        g = np.tanh(zg)
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        # masked steps carry state through unchanged
        c = m * c_new + (1 - m) * c
        h = m * h_new + (1 - m) * h
        cache["gates"].append((i, f, o, g))
        cache["tanh_c"].append(tanh_c)
        cache["h"].append(h)
        cache["c"].append(c)
    logits = h @ model.w_out + model.b_out
    p = _sigmoid(logits)
    cache["h_final"] = h
    return p, cache


def _backward(model: LstmModel, batch: _Batch, y: np.ndarray, p: np.ndarray, cache) -> dict:
    B, T = batch.B, batch.counts.shape[1]
    H = model.hidden
    x = cache["x"]
    dlogits = (p - y) / B
    grads = {
        "E": np.zeros_like(model.E),
        "Wx": np.zeros_like(model.Wx),
        "Wh": np.zeros_like(model.Wh),
        "b": np.zeros_like(model.b),
        "w_out": cache["h_final"].T @ dlogits,
        "b_out_scalar": float(dlogits.sum()),
    }
    dx = np.zeros_like(x)
    dh = dlogits[:, None] * model.w_out
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        m = batch.mask[:, t : t + 1].astype(float)
        i, f, o, g = cache["gates"][t]
        tanh_c = cache["tanh_c"][t]
        h_prev = cache["h"][t]
        c_prev = cache["c"][t]
        dh_new = dh * m
        dc_new = dc * m
        dh_prev_carry = dh * (1 - m)
        dc_prev_carry = dc * (1 - m)
        do = dh_new * tanh_c
        dc_new = dc_new + dh_new * o * (1 - tanh_c * tanh_c)
        df = dc_new * c_prev
        di = dc_new * g
        dg = dc_new * i
        dc_prev = dc_new * f + dc_prev_carry
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)],
            axis=1,
        )
        grads["Wx"] += dz.T @ x[:, t]
        grads["Wh"] += dz.T @ h_prev
        grads["b"] += dz.sum(axis=0)
        dx[:, t] = dz @ model.Wx
        dh = dz @ model.Wh + dh_prev_carry
        dc = dc_prev
    if batch.flat_tokens.size:
        scaled = dx[batch.flat_example, batch.flat_step] / batch.counts[batch.flat_example, batch.flat_step][:, None]
        np.add.at(grads["E"], batch.flat_tokens, scaled)
    return grads


def init_lstm(vocab_size: int, hp: LstmHyperparams, base_rate: float | None = None) -> LstmModel:
    rng = np.random.default_rng(hp.seed)
    d, H = hp.d, hp.h
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0  # forget-gate bias starts open
    b_out = 0.0
    if base_rate is not None:
        rate = min(max(base_rate, 1e-6), 1 - 1e-6)
        b_out = float(np.log(rate / (1 - rate)))
    return LstmModel(
        E=rng.normal(0.0, 0.1, size=(vocab_size, d)),
        Wx=rng.normal(0.0, 1.0 / np.sqrt(d), size=(4 * H, d)),
        Wh=rng.normal(0.0, 1.0 / np.sqrt(H), size=(4 * H, H)),
        b=b,
        w_out=rng.normal(0.0, 0.01, size=H),
        b_out=b_out,
        bag_hours=hp.bag_hours,
        max_bags=hp.max_bags,
    )


def train_lstm(
    prefixes: list[TimelinePrefix],
    labels: np.ndarray,
    vocab_size: int,
    hp: LstmHyperparams | None = None,
) -> tuple[LstmModel, list[float]]:
    """Mini-batch adaptive-step training; deterministic given the seed."""
    hp = hp or LstmHyperparams()
    y = np.asarray(labels, dtype=float)
    if y.min() == y.max():
        raise ValueError("degenerate labels")
    model = init_lstm(vocab_size, hp, base_rate=float(y.mean()))
    bag_lists = [bag_prefix(p, hp.bag_hours, hp.max_bags) for p in prefixes]
    rng = np.random.default_rng(hp.seed + 1)
    params = {"E": model.E, "Wx": model.Wx, "Wh": model.Wh, "b": model.b, "w_out": model.w_out}
    caches = {k: np.zeros_like(v) for k, v in params.items()}
    cache_b_out = 0.0
    n = len(bag_lists)
    losses = []
    for _epoch in range(hp.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            batch = _Batch.from_bags([bag_lists[i] for i in idx])
            p, cache = _forward(model, batch)
            yb = y[idx]
            epoch_loss += _bce(p, yb) * len(idx)
            grads = _backward(model, batch, yb, p, cache)
            gb = grads.pop("b_out_scalar")
            _adagrad(params, grads, caches, hp.lr)
            cache_b_out += gb * gb
            model.b_out -= hp.lr * gb / (np.sqrt(cache_b_out) + 1e-8)
        losses.append(epoch_loss / n)
    return model, losses


def _adagrad(params: dict, grads: dict, caches: dict, lr: float, eps: float = 1e-8):
    for name, g in grads.items():
        caches[name] += g * g
        params[name] -= lr * g / (np.sqrt(caches[name]) + eps)
