"""Learning-dynamics flows for value vectors and feature matrices.

Value flows (TD, Monte Carlo, n-step, TD(lambda)) are linear ODEs with the
true value function as the global fixed point; they are available in closed
form (matrix exponential) and as fixed-step RK4 integrations.  Feature flows
(coupled semi-gradient systems over a feature matrix and ensemble head
weights, including the random-cumulant variant) integrate with RK4 and
report divergence instead of overflowing.

Trajectories are recorded on a thinned grid of at most ~1024 snapshots;
closed-form evaluation is exact at every recorded time regardless of ``dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .mdp import exact_value
from .spectral import Subspace, eigendecompose, eigenbasis_coefficients, grassmann_distance, resolvent

_DIVERGENCE_SUP = 1e8
_MAX_SNAPSHOTS = 1024


class DivergenceDetected(RuntimeError):
    """A flow's sup norm crossed the divergence threshold.

    Carries the first-crossing time and norm; flows that can do so cheaply
    attach the trajectory recorded up to the crossing as ``trajectory``.
    """

    def __init__(self, time: float, sup_norm: float):
        self.time = time
        self.sup_norm = sup_norm
        self.trajectory = None
        super().__init__(
            f"flow diverged at t={time:.6g} (sup norm {sup_norm:.3e} > {_DIVERGENCE_SUP:.0e})"
        )


@dataclass(frozen=True)
class FlowConfig:
    """Shared flow parameters.

    ``alpha``/``beta`` are the feature/weight learning rates of the coupled
    flows; the value flows ignore them.  ``method`` selects closed-form
    evaluation, RK4 integration, or (for the kernel flow) discrete
    gradient steps ("euler", step size ``dt``).
    """

    gamma: float
    alpha: float = 1.0
    beta: float = 0.0
    t_end: float = 10.0
    dt: float = 0.01
    method: str = "closed_form"

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.method not in ("closed_form", "rk4", "euler"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class FlowTrajectory:
    """Time grid plus state snapshots and derived metric columns."""

    times: np.ndarray
    states: np.ndarray
    metrics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _recorded_steps(cfg: FlowConfig) -> tuple[int, int]:
    """(total integrator steps, recording stride)."""
    n_steps = int(round(cfg.t_end / cfg.dt)) if cfg.t_end > 0 else 0
    n_steps = max(n_steps, 1) if cfg.t_end > 0 else 0
    stride = max(1, int(np.ceil(n_steps / _MAX_SNAPSHOTS))) if n_steps else 1
    return n_steps, stride


def _closed_form_grid(
    generator: np.ndarray, offset: np.ndarray, X0: np.ndarray, times: np.ndarray
) -> np.ndarray:
    """Snapshots of ``exp(t G)(X0 - offset) + offset`` at the given times.

    Uses the eigenbasis when the generator's spectrum is real (exact and
    vectorized over times); otherwise steps the exact semigroup
    ``expm(G * delta_t)`` between consecutive recorded times.
    """
    D0 = X0 - offset
    try:
        spec = eigendecompose(generator)
    except np.linalg.LinAlgError:
        spec = None
    if spec is not None and spec.is_real:
        U = spec.right_eigenvectors
        lam = spec.eigenvalues
        W = np.linalg.solve(U, D0.reshape(D0.shape[0], -1))
        decay = np.exp(np.multiply.outer(times, lam))  # (T, n)
        snaps = np.einsum("xi,ti,ic->txc", U, decay, W)
        snaps = snaps.reshape((len(times),) + D0.shape) + offset
        return snaps
    snaps = np.empty((len(times),) + D0.shape)
    current = D0.astype(float).copy()
    snaps[0] = current + offset
    cached_delta, cached_step = None, None
    for k in range(1, len(times)):
        delta = times[k] - times[k - 1]
        if delta != cached_delta:
            cached_delta, cached_step = delta, expm(generator * delta)
        current = cached_step @ current
        snaps[k] = current + offset
    return snaps


def _rk4_grid(
    f, X0: np.ndarray, times_all: np.ndarray, stride: int, check_divergence: bool
) -> np.ndarray:
    recorded = [X0.copy()]
    X = X0.copy()
    # overflow inside a stage just means the divergence check below fires
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, len(times_all)):
            h = times_all[k] - times_all[k - 1]
            k1 = f(X)
            k2 = f(X + 0.5 * h * k1)
            k3 = f(X + 0.5 * h * k2)
            k4 = f(X + h * k3)
            X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if check_divergence and not np.max(np.abs(X)) <= _DIVERGENCE_SUP:
                raise DivergenceDetected(times_all[k], float(np.max(np.abs(X))))
            if k % stride == 0 or k == len(times_all) - 1:
                recorded.append(X.copy())
    return np.asarray(recorded)


def _linear_value_flow(
    V0: np.ndarray,
    P: np.ndarray,
    R: np.ndarray,
    cfg: FlowConfig,
    generator: np.ndarray,
    meta: dict,
) -> FlowTrajectory:
    V0 = np.asarray(V0, dtype=float)
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n) or R.shape != (n,) or V0.shape[0] != n:
        raise ValueError("V0, P, R dimensions do not agree")
    if cfg.method not in ("closed_form", "rk4"):
        raise ValueError("value flows support closed_form and rk4 only")
    Vpi = exact_value(P, R, cfg.gamma)
    offset = Vpi if V0.ndim == 1 else Vpi[:, None]

    n_steps, stride = _recorded_steps(cfg)
    times_all = cfg.dt * np.arange(n_steps + 1)
    rec_idx = np.unique(np.concatenate([np.arange(0, n_steps + 1, stride), [n_steps]]))
    times = times_all[rec_idx]

    if cfg.method == "closed_form":
        states = _closed_form_grid(generator, offset, V0, times)
    else:
        b = -generator @ offset
        states = _rk4_grid(
            lambda V: generator @ V + b, V0, times_all, stride, check_divergence=False
        )
    meta = dict(meta)
    meta["fixed_point"] = Vpi
    meta["t_end_effective"] = float(times[-1])
    return FlowTrajectory(times=times, states=states, meta=meta)


def td_value_flow(V0, P, R, cfg: FlowConfig) -> FlowTrajectory:
    """TD(0) expected dynamics ``dV/dt = R + gamma P V - V``.

    ``V0`` may be a vector or an ``(n, K)`` matrix of K simultaneous flows.
    """
    P = np.asarray(P, dtype=float)
    generator = cfg.gamma * P - np.eye(P.shape[0])
    return _linear_value_flow(V0, P, R, cfg, generator, {"flow": "td"})


def mc_value_flow(V0, P, R, cfg: FlowConfig) -> FlowTrajectory:
    """Monte-Carlo expected dynamics ``dV/dt = V_pi - V`` (linear interpolation)."""
    P = np.asarray(P, dtype=float)
    generator = -np.eye(P.shape[0])
    return _linear_value_flow(V0, P, R, cfg, generator, {"flow": "mc"})


def nstep_value_flow(V0, P, R, n: int, cfg: FlowConfig) -> FlowTrajectory:
    """n-step return dynamics with generator ``(gamma P)^n - I``."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    P = np.asarray(P, dtype=float)
    generator = np.linalg.matrix_power(cfg.gamma * P, n) - np.eye(P.shape[0])
    return _linear_value_flow(V0, P, R, cfg, generator, {"flow": "nstep", "n": n})


def td_lambda_value_flow(V0, P, R, lam: float, cfg: FlowConfig) -> FlowTrajectory:
    """TD(lambda) dynamics with generator ``(1-lambda) sum_k lambda^{k-1} (gamma P)^k - I``.

    The operator series is truncated when a term's sup norm drops below
    1e-14; the truncation order is recorded in the trajectory meta.
    """
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    P = np.asarray(P, dtype=float)
    n_dim = P.shape[0]
    gp = cfg.gamma * P
    term = gp.copy()  # k = 1 term before the (1-lambda) factor
    series = np.zeros_like(P)
    order = 0
    while True:
        contribution = (1.0 - lam) * (lam**order) * term
        series += contribution
        order += 1
        if np.max(np.abs(contribution)) < 1e-14 or order > 10_000:
            break
        term = term @ gp
    generator = series - np.eye(n_dim)
    return _linear_value_flow(
        V0, P, R, cfg, generator, {"flow": "td_lambda", "lambda": lam, "series_order": order}
    )


def _coupled_flow(
    phi0: np.ndarray,
    w0: np.ndarray,
    targets: np.ndarray,
    P: np.ndarray,
    cfg: FlowConfig,
    meta: dict,
) -> FlowTrajectory:
    """Shared engine: ``dPhi = alpha (T + (gamma P - I) Phi W) W^T``, ``dW = beta Phi^T (...)``."""
    phi0 = np.asarray(phi0, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    targets = np.asarray(targets, dtype=float)
    P = np.asarray(P, dtype=float)
    n, K = phi0.shape
    M = w0.shape[1]
    if w0.shape[0] != K:
        raise ValueError(f"w0 must have shape ({K}, M), got {w0.shape}")
    if targets.shape != (n, M):
        raise ValueError(f"targets must have shape ({n}, {M}), got {targets.shape}")
    if P.shape != (n, n):
        raise ValueError("P dimension does not match phi0")
    B = cfg.gamma * P - np.eye(n)

    def f(phi, W):
        delta = targets + B @ (phi @ W)
        return cfg.alpha * (delta @ W.T), cfg.beta * (phi.T @ delta)

    n_steps, stride = _recorded_steps(cfg)
    times_all = cfg.dt * np.arange(n_steps + 1)
    phis = [phi0.copy()]
    weights = [w0.copy()]
    rec_times = [0.0]
    phi, W = phi0.copy(), w0.copy()
    # overflow inside a stage just means the divergence check below fires
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n_steps + 1):
            h = times_all[k] - times_all[k - 1]
            k1p, k1w = f(phi, W)
            k2p, k2w = f(phi + 0.5 * h * k1p, W + 0.5 * h * k1w)
            k3p, k3w = f(phi + 0.5 * h * k2p, W + 0.5 * h * k2w)
            k4p, k4w = f(phi + h * k3p, W + h * k3w)
            phi = phi + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
            W = W + (h / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)
            sup = max(float(np.max(np.abs(phi))), float(np.max(np.abs(W))))
            if not sup <= _DIVERGENCE_SUP:
                raise DivergenceDetected(times_all[k], sup)
            if k % stride == 0 or k == n_steps:
                phis.append(phi.copy())
                weights.append(W.copy())
                rec_times.append(times_all[k])
    times = np.asarray(rec_times)
    weights = np.asarray(weights)
    if cfg.beta == 0.0:
        assert np.max(np.abs(weights - w0[None])) == 0.0, "weights moved with beta=0"
    meta = dict(meta)
    meta["weights"] = weights
    meta["t_end_effective"] = float(times[-1])
    return FlowTrajectory(times=times, states=np.asarray(phis), meta=meta)


def coupled_feature_flow(phi0, w0, P, R, cfg: FlowConfig) -> FlowTrajectory:
    """Semi-gradient feature/weight flow summed over ensemble heads.

    Every head regresses the same reward: the per-head TD error is
    ``R + (gamma P - I) Phi w_m``.  With ``beta = 0`` the weights stay at
    their initialization (asserted).  Raises :class:`DivergenceDetected`
    when any snapshot's sup norm crosses 1e8.
    """
    R = np.asarray(R, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    targets = np.tile(R[:, None], (1, w0.shape[1]))
    return _coupled_flow(phi0, w0, targets, P, cfg, {"flow": "coupled"})


def random_cumulant_flow(phi0, w0, cumulants, P, cfg: FlowConfig) -> FlowTrajectory:
    """Coupled flow where head ``m`` regresses its own cumulant column."""
    cumulants = np.asarray(cumulants, dtype=float)
    return _coupled_flow(phi0, w0, cumulants, P, cfg, {"flow": "random_cumulant"})


def limiting_ensemble_flow(
    phi0, P, R, gamma: float, t: float, noise: np.ndarray | None = None
) -> np.ndarray:
    """Infinite-ensemble feature trajectory at time ``t``.

    Without ``noise`` this is the scaled-learning-rate limit
    ``exp(-t(I - gamma P)) Phi0``; with a noise vector ``eps`` (one entry per
    feature) it is the scaled-initialization limit
    ``exp(-t(I - gamma P))(Phi0 - Psi R eps^T) + Psi R eps^T``.
    """
    phi0 = np.asarray(phi0, dtype=float)
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if P.shape != (phi0.shape[0], phi0.shape[0]):
        raise ValueError("P dimension does not match phi0")
    if noise is None:
        offset = np.zeros_like(phi0)
    else:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (phi0.shape[1],):
            raise ValueError(
                f"noise must have one entry per feature, shape ({phi0.shape[1]},)"
            )
        offset = np.outer(resolvent(P, gamma) @ R, noise)
    E = expm(-t * (np.eye(P.shape[0]) - gamma * P))
    return E @ (phi0 - offset) + offset


def limiting_cumulant_covariance(P, gamma: float, Sigma) -> np.ndarray:
    """Covariance ``Psi Sigma Psi^T`` of the limiting random-cumulant features."""
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise ValueError("Sigma must be square")
    if np.max(np.abs(Sigma - Sigma.T)) > 1e-12:
        raise ValueError("Sigma must be symmetric")
    psi = resolvent(np.asarray(P, dtype=float), gamma)
    cov = psi @ Sigma @ psi.T
    cov = 0.5 * (cov + cov.T)
    min_eig = float(np.min(np.linalg.eigvalsh(cov)))
    if min_eig < -1e-9:
        raise np.linalg.LinAlgError(f"covariance not PSD (min eigenvalue {min_eig:.2e})")
    return cov


def multi_task_limit_flow(
    phi0,
    t: float,
    gamma: float | None = None,
    transition_matrices: list | None = None,
    P=None,
    discounts: list | None = None,
) -> np.ndarray:
    """Zero-reward multi-task limits: averaged policies or averaged discounts.

    Pass either ``transition_matrices`` (a list of per-policy matrices, with a
    single ``gamma``) or ``discounts`` (a list of per-task discounts, with a
    single ``P``); the limit is ``exp(-t(I - mean-discount * mean-P)) Phi0``.
    """
    phi0 = np.asarray(phi0, dtype=float)
    if (transition_matrices is None) == (discounts is None):
        raise ValueError("pass exactly one of transition_matrices or discounts")
    if transition_matrices is not None:
        if len(transition_matrices) == 0:
            raise ValueError("task list must be nonempty")
        if gamma is None:
            raise ValueError("gamma is required with transition_matrices")
        P_bar = np.mean([np.asarray(Pi, dtype=float) for Pi in transition_matrices], axis=0)
        gamma_bar = gamma
    else:
        if len(discounts) == 0:
            raise ValueError("task list must be nonempty")
        if P is None:
            raise ValueError("P is required with discounts")
        P_bar = np.asarray(P, dtype=float)
        gamma_bar = float(np.mean(discounts))
    return limiting_ensemble_flow(phi0, P_bar, np.zeros(P_bar.shape[0]), gamma_bar, t)


def grassmann_convergence_metric(
    traj: FlowTrajectory, target, reference: np.ndarray | None = None
) -> np.ndarray:
    """Per-snapshot Grassmann distance of the (centred) snapshot span to a target.

    Snapshots must be ``(n, K)`` matrices; with ``reference`` given, its
    column-broadcast is subtracted first.  Rank-deficient snapshots yield a
    NaN entry instead of an error.
    """
    target_basis = target.basis if isinstance(target, Subspace) else np.asarray(target, dtype=float)
    K = target_basis.shape[1]
    out = np.full(len(traj.times), np.nan)
    for i, snap in enumerate(traj.states):
        M = np.asarray(snap, dtype=float)
        if M.ndim == 1:
            M = M[:, None]
        if reference is not None:
            M = M - np.asarray(reference, dtype=float)[:, None]
        if M.shape[1] != K:
            raise ValueError(f"snapshot has {M.shape[1]} columns, target has {K}")
        Q, Rfac = np.linalg.qr(M)
        scale = float(np.max(np.abs(M)))
        if scale == 0.0 or np.min(np.abs(np.diag(Rfac))) < 1e-12 * scale:
            continue  # rank deficient: leave NaN
        out[i] = grassmann_distance(Q, target_basis)
    return out


def second_order_check(
    V0, P, R, gamma: float, alpha: float, n_steps: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Discrete TD iterates vs first-order and second-order flow endpoints.

    Runs ``n_steps`` discrete updates ``V <- V + alpha f(V)`` with
    ``f(V) = R + gamma P V - V``, then evaluates at ``t = n_steps * alpha``
    the first-order flow ``dV = f`` and the step-size-corrected flow
    ``dV = f + (alpha/2)(I - gamma P) f`` (the modified equation whose
    truncation error is O(alpha^2)).  Returns the three endpoints.
    """
    V0 = np.asarray(V0, dtype=float)
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    if alpha <= 0 or n_steps < 1:
        raise ValueError("alpha must be positive and n_steps >= 1")
    n = P.shape[0]
    A = np.eye(n) - gamma * P
    Vpi = exact_value(P, R, gamma)
    V = V0.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            V = V + alpha * (R + gamma * (P @ V) - V)
            if not np.max(np.abs(V)) <= _DIVERGENCE_SUP:
                raise DivergenceDetected((k + 1) * alpha, float(np.max(np.abs(V))))
    t = n_steps * alpha
    first = expm(-t * A) @ (V0 - Vpi) + Vpi
    corrected = expm(-t * (A + 0.5 * alpha * (A @ A))) @ (V0 - Vpi) + Vpi
    return V, first, corrected


def td_error_norm(V, P, R, gamma: float) -> float:
    """2-norm of the Bellman error ``V - (R + gamma P V)``."""
    V = np.asarray(V, dtype=float)
    P = np.asarray(P, dtype=float)
    R = np.asarray(R, dtype=float)
    return float(np.linalg.norm(V - (R + gamma * P @ V)))


def eigen_bound(V, spectrum, Vpi, gamma: float) -> float:
    """Eigencoordinate upper bound on the TD error norm.

    ``sqrt(sum_i (alpha_i^pi - alpha_i)^2 (1 - gamma lambda_i)^2)`` where the
    alphas are eigenbasis coordinates; equals :func:`td_error_norm` when the
    transition matrix is symmetric (orthogonal eigenvectors).
    """
    alpha_v = eigenbasis_coefficients(np.asarray(V, dtype=float), spectrum)
    alpha_pi = eigenbasis_coefficients(np.asarray(Vpi, dtype=float), spectrum)
    weights = (1.0 - gamma * spectrum.eigenvalues) ** 2
    return float(np.sqrt(np.sum((alpha_pi - alpha_v) ** 2 * weights)))
