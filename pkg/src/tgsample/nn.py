"""Layers, losses, parameters, Adam and a finite-difference gradient checker."""

from __future__ import annotations

import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_EPS = 1e-7


class ParamStore:
    """Named trainable tensors plus their Adam state."""

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def set(self, name: str, data) -> None:
        p = self.params[name]
        data = np.asarray(data, dtype=np.float64)
        if data.shape != p.data.shape:
            raise ValueError(f"{name}: shape {data.shape} != {p.data.shape}")
        p.data = data.copy()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            self.set(n, arr)

    def num_values(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))


def init_linear(store: ParamStore, name: str, d_in: int, d_out: int, rng,
                literal_init: bool = False) -> None:
    # the literal ±sqrt(d_in) range diverges for d_in > 1; opt-in only
    bound = math.sqrt(d_in) if literal_init else 1.0 / math.sqrt(d_in)
    store.add(f"{name}.W", rng.uniform(-bound, bound, size=(d_in, d_out)))
    store.add(f"{name}.b", rng.uniform(-bound, bound, size=(d_out,)))


def init_mlp(store: ParamStore, name: str, sizes, rng, literal_init=False) -> None:
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{name}.{i}", a, b, rng, literal_init)


def linear_forward(x, W, b) -> Tensor:
    return ad.linear(x, W, b)


def mlp_layers(store: ParamStore, name: str):
    layers, i = [], 0
    while f"{name}.{i}.W" in store:
        layers.append((store[f"{name}.{i}.W"], store[f"{name}.{i}.b"]))
        i += 1
    return layers


def mlp_forward(x, layers, activation=None) -> Tensor:
    """Feed-forward stack; ``activation`` (ReLU by default) between layers, none after the last."""
    act = activation or ad.relu
    for i, (W, b) in enumerate(layers):
        x = ad.linear(x, W, b)
        if i < len(layers) - 1:
            x = act(x)
    return x


def init_time2vec(store: ParamStore, name: str, d_t: int) -> None:
    if d_t < 2:
        raise ValueError("time2vec needs at least two channels")
    # frequency ladder from 1 down to 1e-2 on the sine channels
    store.add(f"{name}.w", np.concatenate([[1.0], 10.0 ** (-2.0 * np.arange(d_t - 1) / max(d_t - 2, 1))]))
    store.add(f"{name}.b", np.zeros(d_t))


def time2vec(t, w: Tensor, b: Tensor) -> Tensor:
    """Channel 0 is ``w0*t + b0``; channels ``i >= 1`` are ``sin(wi*t + bi)``.

    ``t`` is a scalar or any-shaped array of plain floats; the output gets a
    trailing axis of width ``d_t``.
    """
    if w.shape[0] < 2:
        raise ValueError("time2vec needs at least two channels")
    t = np.asarray(t, dtype=np.float64)[..., None]
    z = ad.add(ad.mul(w, t), b)
    return ad.concat([z[..., :1], ad.sin(z[..., 1:])], axis=-1)


def init_mixer(store: ParamStore, name: str, m: int, d_h: int, rng, hidden_tok: int | None = None,
               hidden_ch: int | None = None, literal_init=False) -> None:
    init_mlp(store, f"{name}.tok", [m, hidden_tok or 2 * m, m], rng, literal_init)
    init_mlp(store, f"{name}.ch", [d_h, hidden_ch or d_h, d_h], rng, literal_init)


def mixer_block(tokens: Tensor, store: ParamStore, name: str) -> Tensor:
    """Token-mix then channel-mix, both residual, over ``tokens[..., m, d_h]``."""
    tok = mlp_layers(store, f"{name}.tok")
    ch = mlp_layers(store, f"{name}.ch")
    m = tokens.shape[-2]
    if tok[0][0].shape[0] != m or ch[0][0].shape[0] != tokens.shape[-1]:
        raise ValueError(f"mixer {name} expects (m={tok[0][0].shape[0]}, d={ch[0][0].shape[0]}), got {tokens.shape}")
    x = ad.add(tokens, ad.swapaxes(mlp_forward(ad.swapaxes(tokens, -1, -2), tok), -1, -2))
    return ad.add(x, mlp_forward(x, ch))


def mixer_forward(tokens: Tensor, store: ParamStore, name: str) -> Tensor:
    """Mixer block followed by a mean over the token axis."""
    return ad.mean(mixer_block(tokens, store, name), axis=-2)


def clamp_prob(p: Tensor) -> Tensor:
    return ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def bce_loss(p: Tensor, y, reduction: str = "sum") -> Tensor:
    """Binary cross-entropy, summed over the batch by default."""
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    p = clamp_prob(p)
    ll = ad.add(ad.mul(ad.log(p), y), ad.mul(ad.log(ad.add(ad.neg(p), 1.0)), 1.0 - y))
    total = ad.neg(ad.sum(ll))
    if reduction == "mean":
        return ad.mul(total, 1.0 / max(y.size, 1))
    return total


class MissingGradError(ValueError):
    pass


def adam_step(store: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8,
              frozen=frozenset()) -> None:
    """Bias-corrected Adam on every non-frozen parameter, then zero all grads.

    Every non-frozen parameter must carry a gradient.
    """
    missing = [n for n, p in store.params.items() if n not in frozen and p.grad is None]
    if missing:
        raise MissingGradError(f"no gradient for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for name, p in store.params.items():
        if name in frozen:
            p.grad = None
            continue
        g = p.grad
        if name not in store.m:
            store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.grad = None


def grad_check(fn, params, h: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences.

    ``fn`` takes no arguments and returns a scalar Tensor built from
    ``params`` (a list of Tensors or a ParamStore). The error per entry is
    ``|analytic - numeric| / max(1, |analytic|)``. ``max_entries`` limits the
    entries checked per parameter to a seeded random subset.
    """
    if isinstance(params, ParamStore):
        params = list(params.params.values())
    for p in params:
        p.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with ad.no_grad():
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, max_entries, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + h
                f_plus = fn().item()
                flat[i] = orig - h
                f_minus = fn().item()
                flat[i] = orig
                num = (f_plus - f_minus) / (2 * h)
                ana = a.reshape(-1)[i]
                if not (np.isfinite(num) and np.isfinite(ana)):
                    raise ad.NonFiniteError("non-finite gradient during grad_check")
                worst = max(worst, abs(ana - num) / max(1.0, abs(ana)))
    for p in params:
        p.grad = None
    return worst


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(store: ParamStore, prefix, dtype: str = "float64") -> tuple[Path, Path]:
    """Write ``<prefix>.manifest`` (name,shape,dtype,offset,nbytes) and ``<prefix>.bin``."""
    prefix = Path(prefix)
    dt = np.dtype(dtype).newbyteorder("<")
    lines, offset = [], 0
    manifest, blob = prefix.with_suffix(".manifest"), prefix.with_suffix(".bin")
    with open(blob, "wb") as f:
        for name, p in store.items():
            raw = p.data.astype(dt).tobytes()
            shape = "x".join(str(s) for s in p.data.shape) or "scalar"
            lines.append(f"{name},{shape},{dt.name},{offset},{len(raw)}")
            f.write(raw)
            offset += len(raw)
    manifest.write_text("\n".join(lines) + "\n")
    return manifest, blob


def load_checkpoint(store: ParamStore, prefix) -> None:
    """Load values saved by ``save_checkpoint`` into an identically shaped store."""
    prefix = Path(prefix)
    manifest, blob = prefix.with_suffix(".manifest"), prefix.with_suffix(".bin")
    if not manifest.exists() or not blob.exists():
        raise CheckpointError(f"missing checkpoint files for {prefix}")
    raw = blob.read_bytes()
    seen = set()
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, shape, dtype, offset, nbytes = line.split(",")
        offset, nbytes = int(offset), int(nbytes)
        if name not in store:
            raise CheckpointError(f"checkpoint parameter {name!r} not in model")
        shape = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"blob too short for {name!r}")
        arr = np.frombuffer(raw[offset:offset + nbytes], dtype=np.dtype(dtype).newbyteorder("<"))
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"size mismatch for {name!r}")
        store.set(name, arr.reshape(shape).astype(np.float64))
        seen.add(name)
    missing = set(store.params) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
