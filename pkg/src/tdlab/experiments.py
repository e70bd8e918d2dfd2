"""Deterministic experiment harness: named experiments, CSV artifacts, manifest.

Every experiment is a pure function of (config, RNG); the RNG for repetition
``r`` of experiment ``e`` under master seed ``s`` is ``default_rng([s, e, r])``,
so adding repetitions never perturbs earlier ones.  CSV cells use 17
significant digits, '.' decimals, and '\\n' line endings; files are written to
a temp name and atomically renamed, and identical (config, seed) pairs
reproduce byte-identical CSVs.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import LinearValueModel, Sgd, feature_rank, srank, update_matrix, update_rank
from .causal import build_synthetic_family, fit_reward_weights, intervention_robustness, linear_misa
from .evidence import algorithm1_sumloss, ensemble_weight_ranking, evidence_report, model_selection_task
from .flows import (
    DivergenceDetected,
    FlowConfig,
    coupled_feature_flow,
    grassmann_convergence_metric,
    limiting_cumulant_covariance,
    mc_value_flow,
    random_cumulant_flow,
    second_order_check,
    td_value_flow,
)
from .kernel_td import KernelSpec, build_kernel, circle_embedding, kernel_td_flow, line_embedding, smooth_kernel_generalization, split_kernel
from .mdp import (
    TabularMdp,
    build_chain_mdp,
    build_circle_mdp,
    build_four_rooms,
    deterministic_policy,
    policy_iteration,
    random_mdp,
    random_walk_matrix,
    transition_matrix,
    uniform_policy,
)
from .spectral import (
    eigendecompose,
    real_invariant_basis,
    resolvent,
    rsbf,
    subspace_from_span,
    vector_subspace_distance,
)


class ConfigError(ValueError):
    """Configuration could not be parsed or validated."""


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    """Write a CSV atomically with deterministic float formatting."""
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(c) for c in row) + "\n")
    os.replace(tmp, path)


class ArtifactWriter:
    """Collects per-repetition CSV artifacts under a common prefix."""

    def __init__(self, out_dir: Path, prefix: str):
        self.out_dir = Path(out_dir)
        self.prefix = prefix
        self.files: list[str] = []

    def csv(self, name: str, header, rows) -> Path:
        path = self.out_dir / f"{self.prefix}{name}.csv"
        write_csv(path, header, rows)
        self.files.append(path.name)
        return path


def _float_list(text) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _int_list(text) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _str_list(text) -> list[str]:
    return [x.strip() for x in str(text).split(",") if x.strip()]


# ---------------------------------------------------------------------------
# experiment runners


def _run_two_state(cfg, rng, art):
    """TD vs MC value trajectories on a fixed 2-state MDP."""
    trans = np.array([[[0.2, 0.8]], [[0.8, 0.2]]])
    mdp = TabularMdp(trans, np.array([1.0, 0.0]))
    P = transition_matrix(mdp, uniform_policy(mdp))
    gamma = cfg["gamma"]
    v0 = rng.uniform(-2.0, 2.0, size=(2, cfg["n_inits"]))
    flow_cfg = FlowConfig(gamma=gamma, t_end=cfg["t_end"], dt=cfg["dt"], method="closed_form")
    rows = []
    for flow_name, flow in (("td", td_value_flow), ("mc", mc_value_flow)):
        traj = flow(v0, P, mdp.rewards, flow_cfg)
        for i in range(cfg["n_inits"]):
            for t_idx, t in enumerate(traj.times):
                rows.append((flow_name, i, t, traj.states[t_idx, 0, i], traj.states[t_idx, 1, i]))
    art.csv("trajectories", ("flow", "init", "t", "v_state0", "v_state1"), rows)
    return {"fixed_point": traj.meta["fixed_point"].tolist()}


def _run_chain_transfer(cfg, rng, art):
    """Grassmann transfer heatmaps of EBF/RSBF/random features across a policy path."""
    mdp = build_chain_mdp(
        cfg["n_states"], cfg["slip"], cfg["left_reward"], cfg["right_reward"]
    )
    gamma, K = cfg["gamma"], cfg["k"]
    path = policy_iteration(mdp, gamma)
    n_pol = len(path)
    transition_mats = [
        transition_matrix(mdp, deterministic_policy(a, mdp.n_actions)) for a in path.policies
    ]
    values = path.values

    raw_features = {"ebf": [], "rsbf": [], "random": []}
    for P_j in transition_mats:
        spectrum = eigendecompose(P_j)
        raw_features["ebf"].append(real_invariant_basis(spectrum, K))
        raw_features["rsbf"].append(rsbf(P_j, gamma, K).vectors)
        raw_features["random"].append(rng.standard_normal((mdp.n_states, K)))

    header = ("feature_policy",) + tuple(f"d_value_{jp}" for jp in range(n_pol))
    derived = {"n_policies": n_pol}
    for family, mats in raw_features.items():
        plain_rows, appended_rows = [], []
        for j, M in enumerate(mats):
            basis = subspace_from_span(M)
            basis_app = subspace_from_span(np.column_stack([M, values[j]]))
            plain_rows.append((j,) + tuple(vector_subspace_distance(values[jp], basis) for jp in range(n_pol)))
            appended_rows.append((j,) + tuple(vector_subspace_distance(values[jp], basis_app) for jp in range(n_pol)))
        art.csv(f"transfer_{family}", header, plain_rows)
        art.csv(f"transfer_{family}_appended", header, appended_rows)
    return derived


def _run_four_rooms(cfg, rng, art):
    """Coupled feature flows on the four-rooms walk, tracked against the top EBFs."""
    mdp = build_four_rooms()
    P = transition_matrix(mdp, uniform_policy(mdp))
    K = cfg["k_features"]
    spectrum = eigendecompose(P)
    target = subspace_from_span(real_invariant_basis(spectrum, K))
    rows = []
    for M in _int_list(cfg["m_heads"]):
        phi0 = rng.standard_normal((mdp.n_states, K))
        w0 = cfg["weight_scale"] * rng.standard_normal((K, M))
        flow_cfg = FlowConfig(
            gamma=cfg["gamma"],
            alpha=cfg["alpha"] / M,
            beta=cfg["beta"],
            t_end=cfg["t_end"],
            dt=cfg["dt"],
            method="rk4",
        )
        traj = coupled_feature_flow(phi0, w0, P, mdp.rewards, flow_cfg)
        metric = grassmann_convergence_metric(traj, target)
        rows.extend((M, t, d) for t, d in zip(traj.times, metric))
    art.csv("feature_convergence", ("m_heads", "t", "grassmann_distance"), rows)
    return {"n_states": mdp.n_states, "k_features": K}


def _run_random_cumulants(cfg, rng, art):
    """Random-cumulant feature covariance against the resolvent formula."""
    n, gamma, M = cfg["n_states"], cfg["gamma"], cfg["m_heads"]
    mdp = random_mdp(rng, n)
    P = transition_matrix(mdp, uniform_policy(mdp))
    psi = resolvent(P, gamma)
    sigma = np.eye(n)
    theo = limiting_cumulant_covariance(P, gamma, sigma)

    total = cfg["n_seeds"] * M
    C = rng.standard_normal((total, n))
    X = C @ psi.T  # rows are limiting feature columns
    checkpoints = sorted({min(c, total) for c in (100, 500, 1000, total)})
    err_rows = []
    for c in checkpoints:
        emp = X[:c].T @ X[:c] / c
        err_rows.append((c, float(np.linalg.norm(emp - theo) / np.linalg.norm(theo))))
    art.csv("covariance_error", ("n_pooled_columns", "rel_frobenius_error"), err_rows)

    emp_full = X.T @ X / total
    art.csv(
        "covariance",
        ("i", "j", "empirical", "theoretical"),
        [(i, j, emp_full[i, j], theo[i, j]) for i in range(n) for j in range(n)],
    )

    K = M
    phi0 = rng.standard_normal((n, K))
    w0 = rng.standard_normal((K, M))
    cumulants = rng.standard_normal((n, M))
    flow_cfg = FlowConfig(
        gamma=gamma, alpha=1.0 / M, beta=0.0, t_end=cfg["t_end"], dt=cfg["dt"], method="rk4"
    )
    traj = random_cumulant_flow(phi0, w0, cumulants, P, flow_cfg)
    metric = grassmann_convergence_metric(traj, subspace_from_span(psi @ cumulants))
    art.csv(
        "flow_alignment",
        ("t", "grassmann_distance_to_resolvent_span"),
        list(zip(traj.times, metric)),
    )
    return {"final_rel_frobenius": err_rows[-1][1]}


def _run_kernel_circle(cfg, rng, art):
    """Stability/generalization sweep of kernel TD on the circle MDP."""
    mdp, train_idx = build_circle_mdp(cfg["n_states"], cfg["reward_state"], cfg["n_train"])
    P = transition_matrix(mdp, uniform_policy(mdp))
    embedding = circle_embedding(cfg["n_states"], cfg["radius"])
    sweep_rows = []
    value_header = ("t", "diverged") + tuple(f"v_{s}" for s in range(cfg["n_states"]))
    for gamma in _float_list(cfg["gammas"]):
        for ell in _float_list(cfg["lengthscales"]):
            spec = KernelSpec(lengthscale=ell, embedding=embedding)
            split = split_kernel(spec, train_idx)
            flow_cfg = FlowConfig(
                gamma=gamma, t_end=cfg["t_end"], dt=cfg["dt"], method=cfg["method"]
            )
            name = f"trajectory_gamma{gamma:g}_ell{ell:g}"
            try:
                traj = kernel_td_flow(
                    np.zeros(cfg["n_states"]), split, P, mdp.rewards, gamma, train_idx, flow_cfg
                )
            except DivergenceDetected as exc:
                sweep_rows.append((gamma, ell, "diverged", exc.time, exc.sup_norm, "", ""))
                partial = exc.trajectory
                rows = [
                    (t, int(i == len(partial.times) - 1)) + tuple(state)
                    for i, (t, state) in enumerate(zip(partial.times, partial.states))
                ]
                art.csv(name, value_header, rows)
                continue
            resid = float(traj.metrics["train_residual_sup"][-1])
            test_idx = np.setdiff1d(np.arange(cfg["n_states"]), train_idx)
            test_sup = float(np.max(np.abs(traj.final[test_idx]))) if len(test_idx) else 0.0
            sweep_rows.append((gamma, ell, "converged", "", "", resid, test_sup))
            rows = [(t, 0) + tuple(state) for t, state in zip(traj.times, traj.states)]
            art.csv(name, value_header, rows)
    art.csv(
        "sweep",
        (
            "gamma",
            "lengthscale",
            "outcome",
            "divergence_time",
            "divergence_sup_norm",
            "final_train_residual",
            "final_test_sup",
        ),
        sweep_rows,
    )
    return {"embedding_radius": cfg["radius"], "method": cfg["method"]}


def _run_smooth_kernel(cfg, rng, art):
    """Eigen-kernel generalization across train fractions, targets, and MDP draws."""
    n, gamma = cfg["n_states"], cfg["gamma"]
    S = np.arange(cfg["smooth_k"])
    fractions = _float_list(cfg["fractions"])
    targets = _str_list(cfg["targets"])
    problems = []
    for _ in range(cfg["n_mdps"]):
        P = random_walk_matrix(rng, n, cfg["edge_prob"])
        problems.append((P, rng.standard_normal(n)))
    rows = []
    for target in targets:
        for frac in fractions:
            mses = [
                smooth_kernel_generalization(
                    P, R, gamma, S, frac, target=target, nstep_n=cfg["nstep_n"]
                )
                for P, R in problems
            ]
            mses = np.asarray(mses)
            rows.append(
                (
                    target,
                    frac,
                    float(np.mean(mses)),
                    float(np.std(mses, ddof=1) / np.sqrt(len(mses))) if len(mses) > 1 else 0.0,
                )
            )
    art.csv("generalization", ("target", "train_fraction", "mean_mse", "stderr_mse"), rows)
    return {"smooth_k": cfg["smooth_k"], "n_mdps": cfg["n_mdps"]}


def _run_bms_select(cfg, rng, art):
    """Evidence estimators vs exact log ML across a model-selection sweep."""
    task_seed = cfg["task_seed"]
    if task_seed < 0:
        task_seed = int(rng.integers(2**31))
    base = int(rng.integers(2**31))
    models, data = model_selection_task(cfg["kind"], task_seed)
    k_values = tuple(_int_list(cfg["k_values"]))
    n_seeds = cfg["n_estimator_seeds"]

    header = (
        ("model", "exact_log_ml", "L_hat", "L_stderr")
        + tuple(f"Lk_{k}" for k in k_values)
        + ("LS_hat", "LS_stderr", "kl_gap", "alg1_mean", "alg1_stderr")
    )
    rows = []
    score_columns = {"exact": [], "L": [], "Lk_max": [], "LS": [], "alg1": []}
    for j, model in enumerate(models):
        rep = evidence_report(
            model, data, k_values=k_values, n_seeds=n_seeds,
            ls_samples=cfg["ls_samples"], seed=base + j,
        )
        alg1 = np.array(
            [
                algorithm1_sumloss(model, data, seed=base + 7919 * (j + 1) + s, method=cfg["alg1_method"])
                for s in range(n_seeds)
            ]
        )
        rows.append(
            (j, rep.exact_log_ml, rep.L_hat.value, rep.L_hat.stderr)
            + tuple(rep.Lk_hat[k].value for k in k_values)
            + (
                rep.LS_hat.value,
                rep.LS_hat.stderr,
                rep.kl_gap,
                float(np.mean(alg1)),
                float(np.std(alg1, ddof=1) / np.sqrt(n_seeds)) if n_seeds > 1 else 0.0,
            )
        )
        score_columns["exact"].append(rep.exact_log_ml)
        score_columns["L"].append(rep.L_hat.value)
        score_columns["Lk_max"].append(rep.Lk_hat[max(k_values)].value)
        score_columns["LS"].append(rep.LS_hat.value)
        score_columns["alg1"].append(float(np.mean(alg1)))
    art.csv("evidence", header, rows)

    weights = ensemble_weight_ranking(models, data, seed=base + 104729)
    art.csv("stacking_weights", ("model", "weight"), list(enumerate(weights)))

    selection_rows = [
        (name, int(np.argmax(scores))) for name, scores in score_columns.items()
    ]
    selection_rows.append(("stacking_weight", int(np.argmax(weights))))
    art.csv("selection", ("estimator", "argmax_model"), selection_rows)
    return {"task_seed": task_seed, "kind": cfg["kind"]}


def _run_misa(cfg, rng, art):
    """Selection-rate sweep of linear MISA plus the intervention-robustness curve."""
    base = int(rng.integers(2**31))
    scales = (cfg["intervention_scale"],) * 3
    n_correct = 0
    selection_rows = []
    first_report = None
    first_data = None
    for s in range(cfg["n_seeds"]):
        data = build_synthetic_family(
            cfg["n_envs"], cfg["n_steps"], seed=base + s, intervention_scales=scales
        )
        report = linear_misa(data, alpha=cfg["alpha"])
        if s == 0:
            first_report, first_data = report, data
        correct = report.selected == frozenset({0, 1})
        n_correct += int(correct)
        selection_rows.append(
            (s, " ".join(str(v) for v in sorted(report.selected)), correct)
        )
    art.csv("selection", ("seed_index", "selected", "correct"), selection_rows)
    art.csv(
        "selection_summary",
        ("n_seeds", "n_correct", "rate"),
        [(cfg["n_seeds"], n_correct, n_correct / cfg["n_seeds"])],
    )

    weights_full = fit_reward_weights(first_data)
    subset = sorted(first_report.selected) if first_report.selected else [0, 1]
    weights_misa = fit_reward_weights(first_data, subset=subset)
    curve = intervention_robustness(
        weights_full,
        weights_misa,
        _float_list(cfg["do_values"]),
        seed=base,
        n_steps=cfg["n_steps"],
    )
    art.csv(
        "robustness",
        ("do_value", "full_mse", "misa_mse"),
        list(zip(curve.values, curve.full_mse, curve.misa_mse)),
    )
    return {"selection_rate": n_correct / cfg["n_seeds"], "first_selected": subset}


def _run_capacity(cfg, rng, art):
    """Rank-estimator battery: constructed ranks, tabular updates, RBF lengthscales."""
    n, gamma = cfg["n_states"], cfg["gamma"]
    d = cfg["d_features"]
    rank_rows = []
    for r in _int_list(cfg["constructed_ranks"]):
        A = rng.standard_normal((cfg["n_samples"], r))
        B = rng.standard_normal((r, d))
        rank_rows.append((r, feature_rank(A @ B, cfg["eps"]).rank))
    art.csv("feature_ranks", ("true_rank", "estimated_rank"), rank_rows)

    scale_phi = rng.standard_normal((200, 5)) @ rng.standard_normal((5, d))
    art.csv(
        "srank_invariance",
        ("scale", "feature_rank", "srank"),
        [
            (s, feature_rank(s * scale_phi, cfg["eps"]).rank, srank(s * scale_phi, cfg["eps"]).rank)
            for s in (1.0, 1000.0)
        ],
    )

    mdp = build_chain_mdp(n)
    transitions = [(s, float(mdp.rewards[s]), min(s + 1, n - 1)) for s in range(n)]
    weights = rng.standard_normal(n)
    tab_model = LinearValueModel(np.eye(n), weights, Sgd(cfg["sgd_lr"]))
    U_tab = update_matrix(tab_model, transitions, gamma)
    off_diag = float(np.max(np.abs(U_tab.entries - np.diag(np.diag(U_tab.entries)))))
    art.csv(
        "tabular_update",
        ("n_transitions", "update_rank", "max_offdiagonal"),
        [(n, update_rank(U_tab).rank, off_diag)],
    )

    rbf_rows = []
    rbf_weights = rng.standard_normal(n)
    for ell in _float_list(cfg["lengthscales"]):
        phi = build_kernel(KernelSpec(lengthscale=ell, embedding=line_embedding(n)), np.arange(n))
        model = LinearValueModel(phi, rbf_weights, Sgd(cfg["sgd_lr"]))
        U = update_matrix(model, transitions, gamma)
        rbf_rows.append((ell, update_rank(U).rank))
    art.csv("rbf_update_ranks", ("lengthscale", "update_rank"), rbf_rows)
    return {"tabular_max_offdiagonal": off_diag}


def _run_second_order(cfg, rng, art):
    """Richardson table for the discrete-TD step-size correction."""
    mdp = random_mdp(rng, cfg["n_states"])
    P = transition_matrix(mdp, uniform_policy(mdp))
    V0 = cfg["v_scale"] * rng.standard_normal(cfg["n_states"])
    alphas = _float_list(cfg["alphas"])
    table_rows = []
    errors = []
    for alpha in alphas:
        n_steps = int(round(cfg["t_total"] / alpha))
        discrete, first, corrected = second_order_check(
            V0, P, mdp.rewards, cfg["gamma"], alpha, n_steps
        )
        e1 = float(np.linalg.norm(discrete - first))
        e2 = float(np.linalg.norm(discrete - corrected))
        errors.append((alpha, e1, e2))
        table_rows.append((alpha, n_steps, e1, e2))
    art.csv("richardson", ("alpha", "n_steps", "err_first_order", "err_corrected"), table_rows)

    ratio_rows = []
    for (a0, e10, e20), (a1, e11, e21) in zip(errors, errors[1:]):
        ratio_rows.append((a0, a1, e10 / e11, e20 / e21))
    art.csv(
        "ratios", ("alpha_coarse", "alpha_fine", "ratio_first_order", "ratio_corrected"), ratio_rows
    )
    return {"ratios": [list(r) for r in ratio_rows]}


# ---------------------------------------------------------------------------
# registry and runner


@dataclass(frozen=True)
class ExperimentDef:
    name: str
    index: int
    description: str
    defaults: dict
    runner: object


_DEFS = [
    ExperimentDef(
        "two-state", 0,
        "TD vs MC value-flow trajectories on a 2-state MDP",
        {"gamma": 0.9, "t_end": 8.0, "dt": 0.01, "n_inits": 5},
        _run_two_state,
    ),
    ExperimentDef(
        "chain-transfer", 1,
        "Grassmann transfer heatmaps of EBF/RSBF/random features along a policy-iteration path",
        {
            "n_states": 30, "slip": 0.01, "left_reward": 2.0, "right_reward": 1.0,
            "gamma": 0.9, "k": 4,
        },
        _run_chain_transfer,
    ),
    ExperimentDef(
        "four-rooms-features", 2,
        "Coupled feature flows on the four-rooms walk vs the top eigenvector subspace",
        {
            "gamma": 0.99, "k_features": 10, "m_heads": "1,20,200", "t_end": 100.0,
            "dt": 0.01, "alpha": 1.0, "beta": 0.0, "weight_scale": 1.0,
        },
        _run_four_rooms,
    ),
    ExperimentDef(
        "random-cumulants", 3,
        "Random-cumulant feature covariance against the resolvent formula",
        {
            "n_states": 10, "gamma": 0.9, "m_heads": 5, "n_seeds": 5000,
            "t_end": 6.0, "dt": 0.01,
        },
        _run_random_cumulants,
    ),
    ExperimentDef(
        "kernel-circle", 4,
        "Kernel TD stability/generalization sweep on the circle MDP",
        {
            "n_states": 50, "reward_state": 24, "n_train": 40, "radius": 800.0,
            "gammas": "0.5,0.99", "lengthscales": "0.01,1,100", "t_end": 100.0,
            "dt": 1.0, "method": "euler",
        },
        _run_kernel_circle,
    ),
    ExperimentDef(
        "smooth-kernel-generalization", 5,
        "Eigen-kernel regression MSE across train fractions and target smoothness",
        {
            "n_states": 40, "edge_prob": 0.3, "smooth_k": 20, "gamma": 0.9,
            "n_mdps": 50, "fractions": "0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
            "targets": "value,projected-top,projected-bottom,nstep", "nstep_n": 5,
        },
        _run_smooth_kernel,
    ),
    ExperimentDef(
        "bms-select", 6,
        "Exact evidence vs all estimators on a model-selection task",
        {
            "kind": "feature_dimension", "task_seed": 0, "n_estimator_seeds": 20,
            "k_values": "1,4,16,64", "ls_samples": 16, "alg1_method": "exact",
        },
        _run_bms_select,
    ),
    ExperimentDef(
        "misa-robustness", 7,
        "Linear MISA selection rate and hard-intervention robustness curves",
        {
            "n_envs": 3, "n_steps": 1000, "alpha": 0.05, "n_seeds": 100,
            "do_values": "0,1,2,3,4,5,6,7,8,9,10", "intervention_scale": 3.0,
        },
        _run_misa,
    ),
    ExperimentDef(
        "capacity-ranks", 8,
        "Feature/update rank estimators: constructed ranks and lengthscale sweep",
        {
            "n_states": 30, "gamma": 0.9, "lengthscales": "10,1,0.1", "sgd_lr": 0.1,
            "constructed_ranks": "1,2,3,4,5,6,7,8", "n_samples": 5000,
            "d_features": 12, "eps": 0.01,
        },
        _run_capacity,
    ),
    ExperimentDef(
        "second-order", 9,
        "Richardson ratios for the step-size-corrected TD flow",
        {"n_states": 5, "gamma": 0.9, "alphas": "0.1,0.05,0.025", "t_total": 2.0, "v_scale": 1.0},
        _run_second_order,
    ),
]

EXPERIMENTS = {d.name: d for d in _DEFS}
EXPERIMENT_ORDER = tuple(d.name for d in _DEFS)


def _coerce(name: str, key: str, default, raw):
    if isinstance(raw, type(default)) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{name}.{key}: cannot parse {raw!r} as {type(default).__name__}") from exc


def resolve_config(name: str, overrides: dict | None = None) -> dict:
    """Merge overrides into an experiment's defaults, rejecting unknown keys."""
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choices: {', '.join(EXPERIMENT_ORDER)}")
    defaults = EXPERIMENTS[name].defaults
    config = dict(defaults)
    for key, raw in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r} for experiment {name!r}")
        config[key] = _coerce(name, key, defaults[key], raw)
    return config


def run_experiment(
    name: str,
    overrides: dict | None,
    out_dir,
    seed: int,
    reps: int = 1,
) -> Path:
    """Run an experiment and write artifacts plus ``manifest.json``; returns the manifest path."""
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    config = resolve_config(name, overrides)
    exp = EXPERIMENTS[name]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    outputs: list[str] = []
    derived: dict = {}
    for rep in range(reps):
        rng = np.random.default_rng([seed, exp.index, rep])
        art = ArtifactWriter(out_dir, f"rep{rep:03d}_")
        info = exp.runner(config, rng, art)
        outputs.extend(art.files)
        derived[f"rep{rep:03d}"] = info or {}
    manifest = {
        "experiment": name,
        "experiment_index": exp.index,
        "seed": seed,
        "reps": reps,
        "config": {k: config[k] for k in sorted(config)},
        "tool_version": __version__,
        "outputs": outputs,
        "derived": derived,
        "duration_seconds": time.monotonic() - started,
    }
    manifest_path = out_dir / "manifest.json"
    tmp = manifest_path.with_name("manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    os.replace(tmp, manifest_path)
    return manifest_path
