"""StructNet-CE model: channel layer, interference fold, shared classifier.

Per training sample (pilot RE ``(t, k)``, target stream ``i``, dimension
``d``, bit level ``l``, label ``b``)::

    r = rot_d * (y - w_i (x_i - b a e_d))          # channel shift
    for each interferer j != i:                     # interference fold
        u = w_j^H r / |w_j|^2
        r = r - w_j (u - cmod(u, 2a))
    c = (W^H W)^{-1} W^H r                          # constellation-plane coords
    features = [c_i, c_j, ...] / a  (re/im interleaved, target first)
    logit = MLP(features)

``e_R = 1, e_I = j`` and ``rot_R = 1, rot_I = -j`` so both dimensions of
every stream and every bit level reduce to the same sign decision at ``+-a``,
which is why one classifier is shared by all of them. The integer lattice
offset in the fold is treated as constant when differentiating.

The channel-layer weights ``W[k, :, i]`` are the channel estimate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..numerics import as_stream, cmod
from ..phy import ModulationScheme, PilotScheme, Subframe, decompose_level


class DegenerateWeightsError(RuntimeError):
    """A channel-layer column collapsed to (near) zero or became rank deficient."""


class TrainingFailed(RuntimeError):
    pass


class UnsupportedMode(ValueError):
    pass


DEGENERATE_NORM = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    lr_classifier: float = 1e-3
    lr_channel: float = 1e-3
    init: str = "stacked_ls"
    smoothness: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # channel-layer epsilon; near the gradient scale so vanishing gradients give vanishing steps
    adam_eps_channel: float = 1e-3
    hidden: tuple = (16, 8)
    # classifier-only epochs before the channel layer starts moving
    warmup_epochs: int = 5
    # stop once an epoch's mean loss falls to this value (0 disables)
    target_loss: float = 1e-3
    init_std: float = 0.01
    max_restarts: int = 3

    def __post_init__(self):
        if self.init not in ("small_random", "stacked_ls"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_epochs < 0:
            raise ValueError("epochs, batch_size and warmup_epochs must be non-negative")
        for name in ("lr_classifier", "lr_channel", "adam_eps", "adam_eps_channel", "init_std"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.smoothness < 0 or self.target_loss < 0:
            raise ValueError("smoothness and target_loss must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ValueError("classifier needs two positive hidden widths")


# ---------------------------------------------------------------- classifier


@dataclass
class ClassifierShape:
    n_in: int
    h1: int
    h2: int

    @property
    def size(self) -> int:
        return self.h1 * self.n_in + self.h1 + self.h2 * self.h1 + self.h2 + self.h2 + 1

    def unpack(self, theta):
        """Views ``(W1, b1, W2, b2, w3, b3)`` into a flat parameter vector."""
        n, h1, h2 = self.n_in, self.h1, self.h2
        o = 0
        W1 = theta[o:o + h1 * n].reshape(h1, n); o += h1 * n
        b1 = theta[o:o + h1]; o += h1
        W2 = theta[o:o + h2 * h1].reshape(h2, h1); o += h2 * h1
        b2 = theta[o:o + h2]; o += h2
        w3 = theta[o:o + h2]; o += h2
        b3 = theta[o:o + 1]
        return W1, b1, W2, b2, w3, b3


def init_classifier(shape: ClassifierShape, rng) -> np.ndarray:
    """He-normal hidden layers (std sqrt(2/fan_in)), output std sqrt(1/fan_in), zero biases."""
    rng = as_stream(rng)
    theta = np.zeros(shape.size)
    W1, _, W2, _, w3, _ = shape.unpack(theta)
    W1[:] = rng.normal(0.0, np.sqrt(2.0 / shape.n_in), W1.shape)
    W2[:] = rng.normal(0.0, np.sqrt(2.0 / shape.h1), W2.shape)
    w3[:] = rng.normal(0.0, np.sqrt(1.0 / shape.h2), w3.shape)
    return theta


def classifier_forward(theta, shape: ClassifierShape, feats):
    """Batched MLP. ``feats``: ``(B, n_in)``. Returns logits and the cache for backprop."""
    W1, b1, W2, b2, w3, b3 = shape.unpack(theta)
    a1 = feats @ W1.T + b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ W2.T + b2
    h2 = np.maximum(a2, 0.0)
    logit = h2 @ w3 + b3[0]
    return logit, (feats, a1, h1, a2, h2)


def classifier_backward(theta, shape: ClassifierShape, cache, dlogit):
    """Gradients wrt the flat parameters and the input features."""
    feats, a1, h1, a2, h2 = cache
    W1, _, W2, _, w3, _ = shape.unpack(theta)
    grad = np.zeros_like(theta)
    gW1, gb1, gW2, gb2, gw3, gb3 = shape.unpack(grad)
    gw3[:] = dlogit @ h2
    gb3[0] = dlogit.sum()
    da2 = np.outer(dlogit, w3) * (a2 > 0)
    gW2[:] = da2.T @ h1
    gb2[:] = da2.sum(axis=0)
    da1 = (da2 @ W2) * (a1 > 0)
    gW1[:] = da1.T @ feats
    gb1[:] = da1.sum(axis=0)
    dfeats = da1 @ W1
    return grad, dfeats


# ---------------------------------------------------------------- parameters


@dataclass
class StructNetParams:
    """Channel layer ``W`` (``(Kp, nr, nt)`` complex) and flat classifier weights."""

    W: np.ndarray
    theta: np.ndarray
    shape: ClassifierShape
    modulation: ModulationScheme = field(default_factory=ModulationScheme)
    subcarriers: np.ndarray | None = None

    @property
    def amplitude(self) -> float:
        return self.modulation.amplitude

    @property
    def nr(self) -> int:
        return self.W.shape[1]

    @property
    def nt(self) -> int:
        return self.W.shape[2]

    def copy(self) -> "StructNetParams":
        subs = None if self.subcarriers is None else self.subcarriers.copy()
        return StructNetParams(self.W.copy(), self.theta.copy(), self.shape, self.modulation, subs)


def new_params(W, hidden, modulation: ModulationScheme, rng, subcarriers=None) -> StructNetParams:
    W = np.ascontiguousarray(W, dtype=complex)
    shape = ClassifierShape(2 * W.shape[2], hidden[0], hidden[1])
    return StructNetParams(W, init_classifier(shape, rng), shape, modulation, subcarriers)


_MAGIC = b"SNCE"
_HEADER = struct.Struct("<4sIIIIIIII")


def save_params(params: StructNetParams, path) -> None:
    """Flat little-endian binary snapshot.

    Header: ``b"SNCE"``, version, Kp, nr, nt, modulation order, n_in, h1, h2
    (uint32). Payload: ``W`` as float64 re/im interleaved in ``(Kp, nr, nt)``
    C order, then the classifier vector as float64.
    """
    Kp, nr, nt = params.W.shape
    s = params.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, Kp, nr, nt, params.modulation.order, s.n_in, s.h1, s.h2))
        fh.write(np.ascontiguousarray(params.W, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(params.theta, dtype="<f8").tobytes())


def load_params(path) -> StructNetParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, Kp, nr, nt, order, n_in, h1, h2 = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError("not a StructNet-CE parameter file")
    off = _HEADER.size
    nW = Kp * nr * nt
    W = np.frombuffer(raw, dtype="<c16", count=nW, offset=off).reshape(Kp, nr, nt).copy()
    off += 16 * nW
    shape = ClassifierShape(n_in, h1, h2)
    theta = np.frombuffer(raw, dtype="<f8", count=shape.size, offset=off).copy()
    if off + 8 * shape.size != len(raw):
        raise ValueError("parameter file has trailing or missing bytes")
    return StructNetParams(W, theta, shape, ModulationScheme(order))


# ---------------------------------------------------------------- training data


@dataclass
class TrainingSample:
    subcarrier: int
    pilot_symbol: int
    stream: int
    dim: int
    level: int
    label: int
    y: np.ndarray
    x: np.ndarray


@dataclass
class TrainingSet:
    """Column-oriented training samples over the pilot REs.

    ``t`` indexes the pilot symbols (0..Tp-1), ``k`` the pilot subcarriers.
    ``Yp``: ``(Tp, Kp, nr)``, ``Xp``: ``(Tp, Kp, nt)``.
    """

    t: np.ndarray
    k: np.ndarray
    stream: np.ndarray
    dim: np.ndarray
    level: np.ndarray
    label: np.ndarray
    Yp: np.ndarray
    Xp: np.ndarray
    modulation: ModulationScheme

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, n) -> TrainingSample:
        t, k = int(self.t[n]), int(self.k[n])
        return TrainingSample(k, t, int(self.stream[n]), int(self.dim[n]), int(self.level[n]),
                              int(self.label[n]), self.Yp[t, k], self.Xp[t, k])

    def __iter__(self):
        return (self[n] for n in range(len(self)))

    def subset(self, idx) -> "TrainingSet":
        return TrainingSet(self.t[idx], self.k[idx], self.stream[idx], self.dim[idx], self.level[idx],
                           self.label[idx], self.Yp, self.Xp, self.modulation)


def build_training_set(subframe: Subframe, received) -> TrainingSet:
    """One sample per pilot RE x stream x dimension x bit level."""
    cfg = subframe.config
    if cfg.pilot_scheme is not PilotScheme.NON_ORTHOGONAL:
        raise ValueError("StructNet-CE trains on non-orthogonal pilots only")
    Y = getattr(received, "Y", received)
    ps = list(cfg.pilot_symbols)
    Yp = np.ascontiguousarray(Y[ps])
    Xp = np.ascontiguousarray(subframe.X[ps])
    scheme = cfg.modulation
    Tp, K, nt = Xp.shape
    m = scheme.bits_per_dim
    t, k, s, d, l = np.meshgrid(np.arange(Tp), np.arange(K), np.arange(nt), np.arange(2), np.arange(m), indexing="ij")
    t, k, s, d, l = (v.ravel().astype(np.int64) for v in (t, k, s, d, l))
    sym = Xp[t, k, s]
    level_vals = np.where(d == 0, sym.real, sym.imag)
    bits = decompose_level(level_vals, scheme)
    label = bits[np.arange(t.size), l].astype(np.float64)
    return TrainingSet(t, k, s, d, l, label, Yp, Xp, scheme)


# ---------------------------------------------------------------- single-sample reference

_E_D = (1.0 + 0.0j, 1.0j)
_ROT = (1.0 + 0.0j, -1.0j)


def channel_shift(y, x, w_i, stream: int, dim: int, label: float, a: float):
    """Move the known pilot of ``stream`` to the canonical point ``label * a`` on the real axis."""
    target = x[stream] - label * a * _E_D[dim]
    return _ROT[dim] * (np.asarray(y) - np.asarray(w_i) * target)


def fold_offset(u: complex, a: float) -> complex:
    """Lattice part ``u - cmod(u)`` per dimension, period ``2a``."""
    return complex(u - (cmod(u.real, 2 * a) + 1j * cmod(u.imag, 2 * a)))


def interference_fold(r, W_k, stream: int, a: float):
    """Fold every interfering stream's lattice direction out of ``r``.

    Returns ``(z, offsets)`` where ``offsets[j]`` is the lattice point removed
    along ``W_k[:, j]`` (zero for the target stream).
    """
    z = np.array(r, dtype=complex)
    nt = W_k.shape[1]
    offsets = np.zeros(nt, dtype=complex)
    for j in range(nt):
        if j == stream:
            continue
        wj = W_k[:, j]
        nrm = np.vdot(wj, wj).real
        if np.sqrt(nrm) <= DEGENERATE_NORM:
            raise DegenerateWeightsError(f"interferer column {j} has vanished")
        u = np.vdot(wj, z) / nrm
        L = fold_offset(u, a)
        z = z - wj * L
        offsets[j] = L
    return z, offsets


def stream_coordinates(z, W_k):
    """``(W^H W)^{-1} W^H z``: coordinates of ``z`` in the channel-layer basis."""
    G = W_k.conj().T @ W_k
    try:
        return np.linalg.solve(G, W_k.conj().T @ z)
    except np.linalg.LinAlgError as exc:
        raise DegenerateWeightsError("channel-layer columns are linearly dependent") from exc


def feature_order(stream: int, nt: int):
    return [stream] + [j for j in range(nt) if j != stream]


def features(z, W_k, stream: int, a: float) -> np.ndarray:
    c = stream_coordinates(z, W_k)[feature_order(stream, W_k.shape[1])]
    return np.column_stack([c.real, c.imag]).ravel() / a


def forward(sample: TrainingSample, params: StructNetParams) -> float:
    """Logit for one training sample (readable single-sample path)."""
    a = params.amplitude
    W_k = params.W[sample.subcarrier]
    r = channel_shift(sample.y, sample.x, W_k[:, sample.stream], sample.stream, sample.dim, sample.label, a)
    z, _ = interference_fold(r, W_k, sample.stream, a)
    f = features(z, W_k, sample.stream, a)
    logit, _ = classifier_forward(params.theta, params.shape, f[None, :])
    return float(logit[0])
