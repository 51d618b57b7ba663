"""Federated algorithms over simulated clients.

Five methods plus a heterogeneous variant, all sharing the same round
structure: clients update locally and replace their states with the
across-client mean whenever mod(t, K) = 0.  Oracle draws are keyed by
(client, round, inner step, phase) so that trajectories are bit-stable
under any execution order, and so that the exact reductions hold
(dual averaging with zero regularizer == extra SGD; smoothed inexact
prox with delta = 0 == unsmoothed; identical clients == homogeneous).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .operators import OperatorSpec, affine_operator, affine_parts, eval_operator
from .oracles import OracleSpec, noiseless, sample_oracle
from .regularizers import RegularizerSpec, ZERO_REG, MirrorState, mirror_map
from .rng import PHASE_EXTRAPOLATE, PHASE_INNER, PHASE_UPDATE, RngStream

THEOREM_IDS = ("T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8")
ALGO_IDS = ("lesgd", "lippax", "slippax", "lsgd", "lda", "lesgd-hetero")


def default_inner_steps(K: int, R: int) -> int:
    """Inner proximal loop length; O(log KR) keeps the 4^-H terms low-order."""
    return math.ceil(math.log(max(K * R, 2), 4)) + 2


@dataclass(frozen=True)
class RunConfig:
    """Federation shape, step sizes, and logging cadence for one run."""

    M: int = 1
    K: int = 1
    R: int = 1
    eta: float = 0.1
    H: int | None = None
    gamma: float | None = None
    delta: float = 0.0
    D: float = 1.0
    master_seed: int = 0
    log_every: int | None = None
    log_steps: bool = False
    z0: np.ndarray | None = None

    def __post_init__(self):
        if self.M < 1 or self.K < 1 or self.R < 1:
            raise ValueError("M, K, R must all be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive when given")
        if self.H is not None and self.H < 1:
            raise ValueError("H must be >= 1")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.D <= 0:
            raise ValueError("D must be positive")
        if self.log_every is not None and self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    @property
    def T(self) -> int:
        return self.K * self.R

    def resolved_log_every(self) -> int:
        return self.log_every if self.log_every else max(1, self.R // 20)

    def record_cadence(self) -> int:
        """Steps between trajectory records (log_every communication rounds,
        or every step when log_steps is set)."""
        return 1 if self.log_steps else self.resolved_log_every() * self.K

    def initial_point(self, dim: int) -> np.ndarray:
        if self.z0 is None:
            return np.zeros(dim)
        z0 = np.asarray(self.z0, dtype=float)
        if z0.shape != (dim,):
            raise ValueError(f"z0 has shape {z0.shape}, expected ({dim},)")
        return z0.copy()


@dataclass
class TrajectoryRecord:
    t: int
    mean_iterate: np.ndarray
    output_avg: np.ndarray
    drift_z: float
    drift_x: float
    gap: float | None = None


@dataclass
class Trajectory:
    """Per-round log plus the running-average output of a run."""

    algo: str
    records: list[TrajectoryRecord]
    final_output: np.ndarray
    config: RunConfig
    warnings: list[str] = field(default_factory=list)


def _drift(points: np.ndarray) -> float:
    # identical rows must read as exactly zero dispersion; the mean of M
    # identical floats is not bit-exact in general
    if (points == points[0]).all():
        return 0.0
    center = points.mean(axis=0)
    return float(((points - center) ** 2).sum(axis=1).mean())


def _is_stochastic(oracle: OracleSpec, delta: float = 0.0) -> bool:
    return delta > 0 or (oracle.sigma > 0 and oracle.noise_model != "none")


def _query_clients(oracles: Sequence[OracleSpec], points: np.ndarray,
                   stream: RngStream, t: int, phase: int) -> np.ndarray:
    """One oracle draw per client, at that client's point and path.

    Always evaluated row by row: the homogeneous and per-client-oracle
    code paths must produce bit-identical floats for the exact-reduction
    contracts, and batched matmuls sum in a different order.
    """
    out = np.empty_like(points)
    for m in range(points.shape[0]):
        oracle = oracles[m if len(oracles) > 1 else 0]
        rng = stream.at(m, t, 0, phase) if _is_stochastic(oracle) else None
        out[m] = sample_oracle(oracle, points[m], rng, delta=0.0)
    return out


class _OutputAverager:
    """Streaming mean of the per-round client means; memory O(d)."""

    def __init__(self, dim: int):
        self.value = np.zeros(dim)
        self.count = 0

    def add(self, round_mean: np.ndarray) -> None:
        self.count += 1
        self.value += (round_mean - self.value) / self.count


def _run_extragradient(oracles: Sequence[OracleSpec], cfg: RunConfig,
                       reg: RegularizerSpec, algo: str) -> Trajectory:
    """Two-query extra-gradient family in the dual space (Eq. (5)/(7) shape)."""
    dim = oracles[0].dim
    if any(o.dim != dim for o in oracles):
        raise ValueError("all client oracles must share the same dimension")
    stream = RngStream(cfg.master_seed)
    M, K, T = cfg.M, cfg.K, cfg.T
    eta = cfg.eta
    z = np.tile(cfg.initial_point(dim), (M, 1))
    out = _OutputAverager(dim)
    records: list[TrajectoryRecord] = []
    cadence = cfg.record_cadence()

    for t in range(1, T + 1):
        u = mirror_map(MirrorState(t - 1, eta), reg, z)
        x = z - eta * _query_clients(oracles, u, stream, t, PHASE_EXTRAPOLATE)
        if t % K == 0:
            x[:] = x.mean(axis=0)
        v = mirror_map(MirrorState(t, eta), reg, x)
        z = z - eta * _query_clients(oracles, v, stream, t, PHASE_UPDATE)
        if t % K == 0:
            z[:] = z.mean(axis=0)
        out.add(v.mean(axis=0))
        if t % cadence == 0 or t == T:
            records.append(TrajectoryRecord(
                t=t, mean_iterate=v.mean(axis=0), output_avg=out.value.copy(),
                drift_z=_drift(z), drift_x=_drift(x)))
    return Trajectory(algo=algo, records=records, final_output=out.value,
                      config=cfg)


def run_lesgd(oracle: OracleSpec, cfg: RunConfig) -> Trajectory:
    """Local Extra SGD: extrapolate at z, update with the operator at x."""
    return _run_extragradient([oracle], cfg, ZERO_REG, "lesgd")


def run_lda(oracle: OracleSpec, reg: RegularizerSpec,
            cfg: RunConfig) -> Trajectory:
    """Local dual averaging: extra-gradient on dual states, queried in primal.

    The round-t mirror map is the prox of phi with weight t * eta; with a
    zero regularizer the trajectory coincides with run_lesgd draw-for-draw.
    """
    traj = _run_extragradient([oracle], cfg, reg, "lda")
    if not (oracle.base.G < math.inf):
        traj.warnings.append(
            "operator does not declare a finite bound G; the composite "
            "guarantee does not cover this problem")
    return traj


def run_lesgd_hetero(oracles: Sequence[OracleSpec],
                     cfg: RunConfig) -> Trajectory:
    """LESGD with one oracle per client; the mean operator is not queried."""
    oracles = list(oracles)
    if len(oracles) != cfg.M:
        raise ValueError(f"need exactly M={cfg.M} client oracles, "
                         f"got {len(oracles)}")
    return _run_extragradient(oracles, cfg, ZERO_REG, "lesgd-hetero")


def run_lsgd(oracle: OracleSpec, cfg: RunConfig) -> Trajectory:
    """Plain local SGD on the operator; sound only for co-coercive classes."""
    dim = oracle.dim
    stream = RngStream(cfg.master_seed)
    M, K, T = cfg.M, cfg.K, cfg.T
    x = np.tile(cfg.initial_point(dim), (M, 1))
    out = _OutputAverager(dim)
    records: list[TrajectoryRecord] = []
    cadence = cfg.record_cadence()
    warnings: list[str] = []
    if not (oracle.base.beta < math.inf):
        warnings.append(
            "operator does not declare a finite co-coercivity constant; "
            "plain local SGD has no guarantee on this problem")
    for t in range(1, T + 1):
        x = x - cfg.eta * _query_clients([oracle], x, stream, t,
                                         PHASE_EXTRAPOLATE)
        if t % K == 0:
            x[:] = x.mean(axis=0)
        out.add(x.mean(axis=0))
        if t % cadence == 0 or t == T:
            records.append(TrajectoryRecord(
                t=t, mean_iterate=x.mean(axis=0), output_avg=out.value.copy(),
                drift_z=_drift(x), drift_x=_drift(x)))
    return Trajectory(algo="lsgd", records=records, final_output=out.value,
                      config=cfg, warnings=warnings)


def _inner_prox(oracle: OracleSpec, anchor: np.ndarray, eta: float,
                gamma: float, H: int, delta: float, stream: RngStream | None,
                client: int, t: int) -> np.ndarray:
    """H SGD steps on the regularized operator V(x) + (x - anchor) / eta.

    Smoothing (delta > 0) perturbs only these inner queries.  Supports a
    batch of anchors in the deterministic case.
    """
    x = anchor.copy()
    stochastic = _is_stochastic(oracle, delta)
    for ell in range(1, H + 1):
        rng = stream.at(client, t, ell, PHASE_INNER) if stochastic else None
        q = sample_oracle(oracle, x, rng, delta=delta)
        x = x - gamma * (q + (x - anchor) / eta)
    return x


def solve_inner_prox(op: OperatorSpec | OracleSpec, z: np.ndarray, eta: float,
                     gamma: float, H: int, stream: RngStream | None = None,
                     delta: float = 0.0, client: int = 0,
                     round_index: int = 1) -> np.ndarray:
    """Standalone inner proximal loop, exposed for testing the contraction."""
    oracle = op if isinstance(op, OracleSpec) else noiseless(op)
    if _is_stochastic(oracle, delta) and stream is None:
        raise ValueError("stochastic inner loop requires an RngStream")
    return _inner_prox(oracle, np.asarray(z, dtype=float), eta, gamma, H,
                       delta, stream, client, round_index)


def _run_inexact_prox(oracle: OracleSpec, cfg: RunConfig, delta: float,
                      algo: str) -> Trajectory:
    dim = oracle.dim
    stream = RngStream(cfg.master_seed)
    M, K, T = cfg.M, cfg.K, cfg.T
    eta = cfg.eta
    H = cfg.H if cfg.H is not None else default_inner_steps(cfg.K, cfg.R)
    gamma = cfg.gamma
    if gamma is None:
        gamma = derived_gamma(eta, oracle.base.L)
    z = np.tile(cfg.initial_point(dim), (M, 1))
    out = _OutputAverager(dim)
    records: list[TrajectoryRecord] = []
    cadence = cfg.record_cadence()
    batch_inner = not _is_stochastic(oracle, delta)

    for t in range(1, T + 1):
        if batch_inner:
            x = _inner_prox(oracle, z, eta, gamma, H, 0.0, None, 0, t)
        else:
            x = np.empty_like(z)
            for m in range(M):
                x[m] = _inner_prox(oracle, z[m], eta, gamma, H, delta,
                                   stream, m, t)
        # outer extra step: fresh, unsmoothed draw at x_t^m
        z = z - eta * _query_clients([oracle], x, stream, t, PHASE_UPDATE)
        if t % K == 0:
            z[:] = z.mean(axis=0)
        out.add(x.mean(axis=0))
        if t % cadence == 0 or t == T:
            records.append(TrajectoryRecord(
                t=t, mean_iterate=x.mean(axis=0), output_avg=out.value.copy(),
                drift_z=_drift(z), drift_x=_drift(x)))
    return Trajectory(algo=algo, records=records, final_output=out.value,
                      config=cfg)


def run_lippax(oracle: OracleSpec, cfg: RunConfig) -> Trajectory:
    """Local inexact proximal point with an extra-gradient outer step."""
    return _run_inexact_prox(oracle, cfg, 0.0, "lippax")


def run_slippax(oracle: OracleSpec, cfg: RunConfig) -> Trajectory:
    """run_lippax with Gaussian smoothing of the inner-loop queries only."""
    return _run_inexact_prox(oracle, cfg, cfg.delta, "slippax")


def derived_gamma(eta: float, L: float) -> float:
    """Inner step size 1 / (eta (L + 1/eta)^2)."""
    return 1.0 / (eta * (L + 1.0 / eta) ** 2)


@dataclass(frozen=True)
class StepSizePlan:
    """Theorem schedule: eta as the min over branches, plus gamma/delta."""

    theorem_id: str
    eta: float
    gamma: float | None
    delta: float
    active_branch: int
    branches: tuple[float, ...]


def _require(constants: dict, shape: dict, names_c: Sequence[str],
             names_s: Sequence[str], theorem_id: str) -> None:
    for name in names_c:
        v = constants.get(name)
        if v is None or not np.isfinite(v):
            raise ValueError(f"{theorem_id} requires a finite {name}")
    for name in names_s:
        if shape.get(name) is None:
            raise ValueError(f"{theorem_id} requires {name}")


def step_size(theorem_id: str, constants: dict, shape: dict,
              delta_rule: str = "sqrt-d") -> StepSizePlan:
    """Exact theorem step-size schedule.

    ``constants`` carries {L, G, beta, Lambda, d, xi}; ``shape`` carries
    {M, K, R, sigma, D}.  Branches whose denominator vanishes (sigma = 0,
    or xi = 0 for T8) are treated as +inf; ties pick the lowest index.
    ``delta_rule`` selects the smoothing radius for T5: the theorem's
    eta*sigma/sqrt(d) or the appendix's eta*sigma/d**0.25.
    """
    if theorem_id not in THEOREM_IDS:
        raise ValueError(f"unknown theorem id {theorem_id!r}")
    if delta_rule not in ("sqrt-d", "fourth-root-d"):
        raise ValueError(f"unknown delta rule {delta_rule!r}")
    _require(constants, shape, ["L"], ["M", "K", "R", "sigma", "D"], theorem_id)
    L = float(constants["L"])
    M, K, R = int(shape["M"]), int(shape["K"]), int(shape["R"])
    sigma, D = float(shape["sigma"]), float(shape["D"])
    e = math.e

    def div(num: float, den: float) -> float:
        return num / den if den > 0 else math.inf

    if theorem_id == "T1":
        branches = [
            div(1.0, math.sqrt(14 * K) * L),
            div(D * math.sqrt(M), sigma * math.sqrt(6 * K * R)),
            div(D ** (2 / 3), 936 ** (1 / 3) * e ** (2 / 3) * K ** (2 / 3)
                * R ** (1 / 3) * sigma ** (2 / 3) * L ** (1 / 3)),
        ]
    elif theorem_id == "T2":
        branches = [
            div(1.0, L),
            div(D * math.sqrt(M), sigma * math.sqrt(6 * K * R)),
            div(D ** (2 / 3), 180 ** (1 / 3) * K ** (2 / 3) * R ** (1 / 3)
                * sigma ** (2 / 3) * L ** (1 / 3)),
        ]
    elif theorem_id == "T3":
        _require(constants, shape, ["G"], [], theorem_id)
        branches = [
            div(1.0, L),
            div(D * math.sqrt(M), sigma * math.sqrt(K * R)),
            div(D ** (2 / 5), (60 * e) ** (1 / 5) * K ** (3 / 5) * R ** (1 / 5)
                * sigma ** (2 / 5) * L ** (2 / 5)),
            div(D ** (2 / 3), (54 * e) ** (1 / 3) * K ** (2 / 3) * R ** (1 / 3)
                * L ** (1 / 3) * sigma ** (2 / 3)),
            div(D, sigma * math.sqrt(15 * K * R)),
        ]
    elif theorem_id == "T4":
        _require(constants, shape, ["G", "Lambda"], [], theorem_id)
        Lam = float(constants["Lambda"])
        branches = [
            div(1.0, L),
            div(D ** (2 / 5), K ** (3 / 5) * R ** (1 / 5) * sigma ** (2 / 5)
                * L ** (2 / 5)),
            div(D ** (2 / 3), K ** (2 / 3) * R ** (1 / 3) * sigma ** (2 / 3)
                * L ** (1 / 3)),
            div(D ** (1 / 2), K ** (1 / 4) * R ** (1 / 4) * sigma ** (1 / 2)
                * L ** (1 / 2)),
            div(D ** (1 / 3), Lam ** (1 / 3) * sigma ** (2 / 3) * R ** (1 / 6)
                * K ** (1 / 6)),
            div(D * math.sqrt(M), K ** (1 / 2) * R ** (1 / 2) * sigma),
        ]
    elif theorem_id == "T5":
        _require(constants, shape, ["G", "d"], [], theorem_id)
        d = float(constants["d"])
        branches = [
            div(D ** (1 / 2), K ** (1 / 4) * R ** (1 / 4) * L ** (1 / 2)
                * sigma ** (1 / 2) * d ** (1 / 8)),
            div(D ** (2 / 5), sigma ** (2 / 5) * L ** (2 / 5) * d ** (1 / 10)
                * K ** (3 / 5) * R ** (1 / 5)),
            div(D ** (2 / 3), K ** (2 / 3) * R ** (1 / 3) * sigma ** (2 / 3)
                * L ** (2 / 3)),
            div(1.0, L),
        ]
    elif theorem_id == "T6":
        _require(constants, shape, ["beta"], [], theorem_id)
        beta = float(constants["beta"])
        branches = [
            div(1.0, beta),
            div(D * math.sqrt(M), math.sqrt(K * R) * sigma),
            div(D ** (2 / 3), 2 ** (1 / 2) * K ** (2 / 3) * R ** (1 / 3)
                * L ** (1 / 3) * sigma ** (2 / 3)),
        ]
    elif theorem_id == "T7":
        _require(constants, shape, ["G"], [], theorem_id)
        G = float(constants["G"])
        branches = [
            div(D * math.sqrt(M), sigma * math.sqrt(6 * K * R)),
            div(D ** (2 / 3), 17 ** (1 / 3) * K ** (1 / 3) * R ** (1 / 3)
                * L ** (2 / 3) * G ** (2 / 3)),
            div(1.0, math.sqrt(10) * L),
        ]
    else:  # T8
        _require(constants, shape, ["xi"], [], theorem_id)
        xi = float(constants["xi"])
        branches = [
            div(1.0, math.sqrt(K) * L),
            div(D * math.sqrt(M), sigma * math.sqrt(K * R)),
            div(D ** (2 / 3), K ** (2 / 3) * R ** (1 / 3) * sigma ** (2 / 3)
                * L ** (1 / 3)),
            div(D ** (2 / 3), xi ** (2 / 3) * K * R ** (1 / 3) * L ** (1 / 3)),
            div(D, (xi * sigma) ** (1 / 2) * K ** (3 / 4) * R ** (1 / 2)),
            div(D, xi * K * math.sqrt(R)),
        ]

    eta = min(branches)
    if not np.isfinite(eta) or eta <= 0:
        raise ValueError(f"{theorem_id} schedule produced eta={eta!r}")
    active = branches.index(eta)
    gamma = derived_gamma(eta, L) if theorem_id in ("T3", "T4", "T5") else None
    delta = 0.0
    if theorem_id == "T5":
        d = float(constants["d"])
        root = math.sqrt(d) if delta_rule == "sqrt-d" else d ** 0.25
        delta = eta * sigma / root
    return StepSizePlan(theorem_id=theorem_id, eta=eta, gamma=gamma,
                        delta=delta, active_branch=active,
                        branches=tuple(branches))


def constants_of(op: OperatorSpec, xi: float | None = None,
                 G_override: float | None = None) -> dict:
    """Constants dict for step_size, read off an operator's declarations."""
    return {"L": op.L, "G": G_override if G_override is not None else op.G,
            "beta": op.beta, "Lambda": op.Lambda, "d": op.dim, "xi": xi}


def estimate_heterogeneity(ops: Sequence[OperatorSpec], radius: float,
                           n_points: int = 1000, seed: int = 0) -> float:
    """Max over sampled z in the ball of ||V_m(z) - mean V(z)||."""
    dims = {op.dim for op in ops}
    if len(dims) != 1:
        raise ValueError("client operators must share the same dimension")
    d = dims.pop()
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_points, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    pts = u * (radius * rng.random(n_points) ** (1.0 / d))[:, None]
    values = np.stack([eval_operator(op, pts) for op in ops])
    mean = values.mean(axis=0)
    return float(np.linalg.norm(values - mean, axis=2).max())


def mean_operator(ops: Sequence[OperatorSpec]) -> OperatorSpec:
    """The averaged operator (1/M) sum V_m, for gap evaluation (affine only)."""
    if not all(op.is_affine for op in ops):
        raise ValueError("mean_operator is implemented for affine clients only")
    parts = [affine_parts(op) for op in ops]
    A = np.mean([p[0] for p in parts], axis=0)
    b = np.mean([p[1] for p in parts], axis=0)
    return affine_operator(A, b)
