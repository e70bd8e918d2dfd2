"""Kernel semi-gradient TD with held-out states, and eigen-kernel regression.

The TD flow updates a value estimate over *all* states while Bellman errors
are measured only on a training subset: train rows move by ``K_train @ delta``
and held-out rows by ``K_cross @ delta``, so generalization is entirely
mediated by the kernel's cross section.  Bootstrap targets use the full value
vector, held-out entries included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flows import DivergenceDetected, FlowConfig, FlowTrajectory, _DIVERGENCE_SUP, _recorded_steps
from .mdp import exact_value
from .spectral import NonRealSpectrum, eigendecompose


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel over an explicit embedding of the state indices."""

    lengthscale: float
    embedding: np.ndarray
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError(f"unsupported kernel kind {self.kind!r}")
        if self.lengthscale <= 0:
            raise ValueError("lengthscale must be positive")
        emb = np.asarray(self.embedding, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        if emb.ndim != 2:
            raise ValueError("embedding must be a vector or matrix of coordinates")
        if not np.all(np.isfinite(emb)):
            raise ValueError("embedding must be finite")
        object.__setattr__(self, "embedding", emb)

    @property
    def n_states(self) -> int:
        return self.embedding.shape[0]


def line_embedding(n_states: int) -> np.ndarray:
    """Embed integer states as 1-D real coordinates 0, 1, ..., n-1."""
    return np.arange(n_states, dtype=float)[:, None]


def circle_embedding(n_states: int, radius: float = 800.0) -> np.ndarray:
    """Embed states uniformly on a circle in the plane.

    The default radius places adjacent states roughly 100 apart, which keeps
    the lengthscale sweep {0.01, 1, 100} on the interesting side of the
    stability boundary: only the largest lengthscale couples neighbours.
    """
    angles = 2.0 * np.pi * np.arange(n_states) / n_states
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


@dataclass(frozen=True)
class SplitKernel:
    """Gram matrix split into train block and held-out-to-train cross section.

    ``K_cross`` rows follow the held-out states in ascending index order.
    """

    K_train: np.ndarray
    K_cross: np.ndarray

    def __post_init__(self):
        K_train = np.asarray(self.K_train, dtype=float)
        K_cross = np.asarray(self.K_cross, dtype=float)
        m = K_train.shape[0]
        if K_train.shape != (m, m):
            raise ValueError("K_train must be square")
        if K_cross.ndim != 2 or K_cross.shape[1] != m:
            raise ValueError("K_cross must have one column per train state")
        if np.max(np.abs(K_train - K_train.T)) > 1e-9:
            raise ValueError("K_train must be symmetric")
        min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (K_train + K_train.T))))
        if min_eig < -1e-9:
            raise ValueError(f"K_train not PSD (min eigenvalue {min_eig:.2e})")
        object.__setattr__(self, "K_train", K_train)
        object.__setattr__(self, "K_cross", K_cross)

    @property
    def n_train(self) -> int:
        return self.K_train.shape[0]


def build_kernel(spec: KernelSpec, states) -> np.ndarray:
    """Gram matrix ``K[i, j] = exp(-||e_i - e_j||^2 / (2 l^2))`` over the given states."""
    states = np.asarray(states, dtype=int)
    if states.size == 0:
        raise ValueError("states must be nonempty")
    E = spec.embedding[states]
    sq = np.sum((E[:, None, :] - E[None, :, :]) ** 2, axis=-1)
    return np.exp(-sq / (2.0 * spec.lengthscale**2))


def split_kernel(spec: KernelSpec, train_idx) -> SplitKernel:
    """Build the train/held-out kernel split for a training subset."""
    train_idx = np.asarray(train_idx, dtype=int)
    test_idx = np.setdiff1d(np.arange(spec.n_states), train_idx)
    K = build_kernel(spec, np.arange(spec.n_states))
    return SplitKernel(
        K_train=K[np.ix_(train_idx, train_idx)], K_cross=K[np.ix_(test_idx, train_idx)]
    )


def kernel_td_flow(
    V0, split: SplitKernel, P, R, gamma: float, train_idx, cfg: FlowConfig
) -> FlowTrajectory:
    """Kernel TD dynamics ``dV/dt = K_all @ (R + gamma P V - V)[train]``.

    ``method="rk4"`` integrates the continuous flow; ``method="euler"`` takes
    discrete semi-gradient steps of size ``dt`` (the regime in which large
    lengthscales destabilize bootstrapping at high discounts).  Raises
    :class:`~tdlab.flows.DivergenceDetected` at the first step whose sup norm
    crosses 1e8.
    """
    V0 = np.asarray(V0, dtype=float)
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    train_idx = np.asarray(train_idx, dtype=int)
    n = P.shape[0]
    m = train_idx.size
    if m == 0:
        raise ValueError("train_idx must be nonempty")
    if V0.shape != (n,) or R.shape != (n,):
        raise ValueError("V0, P, R dimensions do not agree")
    if split.n_train != m or split.K_cross.shape[0] != n - m:
        raise ValueError("split kernel does not match train_idx")
    if cfg.method == "closed_form":
        raise ValueError("kernel_td_flow supports rk4 and euler methods only")
    test_idx = np.setdiff1d(np.arange(n), train_idx)
    K_all = np.empty((n, m))
    K_all[train_idx] = split.K_train
    K_all[test_idx] = split.K_cross

    def f(V):
        delta = (R + gamma * (P @ V) - V)[train_idx]
        return K_all @ delta

    n_steps, stride = _recorded_steps(cfg)
    times_all = cfg.dt * np.arange(n_steps + 1)
    snaps = [V0.copy()]
    rec_times = [0.0]
    V = V0.copy()
    # overflow inside a stage just means the divergence check below fires
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            h = cfg.dt
            if cfg.method == "euler":
                V = V + h * f(V)
            else:
                k1 = f(V)
                k2 = f(V + 0.5 * h * k1)
                k3 = f(V + 0.5 * h * k2)
                k4 = f(V + h * k3)
                V = V + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            sup = float(np.max(np.abs(V)))
            if not sup <= _DIVERGENCE_SUP:
                exc = DivergenceDetected(times_all[k], sup)
                exc.trajectory = FlowTrajectory(
                    times=np.append(np.asarray(rec_times), times_all[k]),
                    states=np.asarray(snaps + [V.copy()]),
                    meta={"flow": "kernel_td", "diverged": True},
                )
                raise exc
            if k % stride == 0 or k == n_steps:
                snaps.append(V.copy())
                rec_times.append(times_all[k])
    states = np.asarray(snaps)
    residual = np.max(
        np.abs((R[None, :] + gamma * states @ P.T - states)[:, train_idx]), axis=1
    )
    return FlowTrajectory(
        times=np.asarray(rec_times),
        states=states,
        metrics={"train_residual_sup": residual},
        meta={"flow": "kernel_td", "train_idx": train_idx, "method": cfg.method},
    )


def _orthogonal_projection(y: np.ndarray, basis: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return basis @ coef


def smooth_kernel_generalization(
    P,
    R,
    gamma: float,
    S,
    train_fraction: float,
    target: str = "value",
    nstep_n: int | None = None,
    jitter: float = 1e-10,
) -> float:
    """Held-out MSE of eigen-kernel regression ``K_S(x, y) = sum_{i in S} v_i(x) v_i(y)``.

    ``S`` indexes eigenvectors in decreasing-real-part order (0 = smoothest).
    The training subset is the first ``floor(n * train_fraction)`` states;
    with ``train_fraction = 1`` the MSE is evaluated on all states instead of
    the (empty) held-out set.  Targets: the exact value function ("value"),
    its orthogonal projection onto span(S) ("projected-top") or onto the
    complementary eigenvectors ("projected-bottom"), or the n-step return
    target ``sum_{j<n} (gamma P)^j R`` ("nstep", with ``nstep_n``).

    Requires a real spectrum; raises :class:`NonRealSpectrum` otherwise.
    """
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    n = P.shape[0]
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    spectrum = eigendecompose(P)
    if not spectrum.is_real:
        raise NonRealSpectrum("smooth_kernel_generalization requires a real spectrum")
    S = np.asarray(S, dtype=int)
    V = spectrum.right_eigenvectors
    basis = V[:, S]

    Vpi = exact_value(P, R, gamma)
    if target == "value":
        y = Vpi
    elif target == "projected-top":
        y = _orthogonal_projection(Vpi, basis)
    elif target == "projected-bottom":
        complement = np.setdiff1d(np.arange(n), S)
        y = _orthogonal_projection(Vpi, V[:, complement])
    elif target == "nstep":
        if nstep_n is None or nstep_n < 1:
            raise ValueError("target 'nstep' requires a positive nstep_n")
        y = np.zeros(n)
        term = R.copy()
        for _ in range(nstep_n):
            y += term
            term = gamma * (P @ term)
    else:
        raise ValueError(f"unknown target {target!r}")

    n_train = int(np.floor(n * train_fraction))
    if n_train < 1:
        raise ValueError("train_fraction keeps no training states")
    train = np.arange(n_train)
    test = np.arange(n_train, n) if n_train < n else np.arange(n)

    K = basis @ basis.T
    alpha = np.linalg.solve(
        K[np.ix_(train, train)] + jitter * np.eye(n_train), y[train]
    )
    pred = K[np.ix_(test, train)] @ alpha
    return float(np.mean((pred - y[test]) ** 2))
