"""Monotone operators on R^d and the synthetic problem zoo.

An :class:`OperatorSpec` bundles an evaluation rule with declared
constants (smoothness L, operator bound G, co-coercivity beta, and the
second-order bound Lambda).  Constants are exact where they can be read
off a spectrum (affine kinds) and conservative upper bounds otherwise;
:func:`verify_properties` measures them empirically so tests can hold
the declarations to account.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

INF = float("inf")

KINDS = (
    "affine",
    "bilinear-saddle",
    "skew",
    "quadratic-gradient",
    "bounded-nonlinear",
    "regularized",
)

# max |d^2/du^2 tanh(u)| = 4 / (3 sqrt(3)); halved it bounds the
# second-order remainder of each tanh term.
_TANH_CURVATURE = 2.0 / (3.0 * math.sqrt(3.0))


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class OperatorSpec:
    """A monotone operator V: R^d -> R^d with declared constants."""

    dim: int
    kind: str
    payload: dict[str, Any]
    L: float
    G: float = INF
    beta: float = INF
    Lambda: float = INF
    is_affine: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.L < 0:
            raise ValueError("L must be nonnegative")
        if self.is_affine:
            A = self.payload["A"]
            s_min = float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())
            if s_min < -1e-10:
                raise ValueError(
                    f"affine matrix is not monotone: min sym eigenvalue {s_min:g}")

    @property
    def solution(self) -> np.ndarray | None:
        """A known zero of V, when the construction provides one."""
        return self.payload.get("solution")


@dataclass(frozen=True)
class PropertyReport:
    """Empirical measurements of the declared operator constants."""

    monotone_violations: int
    measured_L: float
    measured_beta: float
    measured_G: float
    pairs_tested: int


def _check_point(op: OperatorSpec, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != op.dim:
        raise ValueError(
            f"point has dimension {z.shape[-1]}, operator expects {op.dim}")
    return z


def eval_operator(op: OperatorSpec, z: np.ndarray) -> np.ndarray:
    """Evaluate V(z).  Accepts batches over leading axes."""
    z = _check_point(op, z)
    if op.is_affine:
        return z @ op.payload["A"].T + op.payload["b"]
    if op.kind == "bounded-nonlinear":
        C, b0 = op.payload["C"], op.payload["b0"]
        return np.tanh(z @ C.T + b0) @ C
    if op.kind == "regularized":
        base = op.payload["base"]
        return eval_operator(base, z) + (z - op.payload["center"]) / op.payload["eta"]
    raise AssertionError(f"unhandled kind {op.kind}")


def op_jacobian(op: OperatorSpec, z: np.ndarray) -> np.ndarray:
    """Jacobian of V at a single point z (analytic, per kind)."""
    z = _check_point(op, z)
    if op.is_affine:
        return op.payload["A"].copy()
    if op.kind == "bounded-nonlinear":
        C, b0 = op.payload["C"], op.payload["b0"]
        w = 1.0 / np.cosh(C @ z + b0) ** 2
        return C.T @ (w[:, None] * C)
    if op.kind == "regularized":
        base = op.payload["base"]
        return op_jacobian(base, z) + np.eye(op.dim) / op.payload["eta"]
    raise AssertionError(f"unhandled kind {op.kind}")


def affine_parts(op: OperatorSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return (A, b) with V(z) = Az + b; rejects non-affine operators."""
    if not op.is_affine:
        raise ValueError(f"operator kind {op.kind!r} is not affine")
    return op.payload["A"], op.payload["b"]


def beta_affine(A: np.ndarray) -> float:
    """Smallest beta with ||A w||^2 <= beta <A w, w> for all w (inf if none)."""
    S = 0.5 * (A + A.T)
    lam, U = np.linalg.eigh(S)
    lmax = float(lam.max(initial=0.0))
    if lmax <= 0.0:
        # S == 0: co-coercive only if A == 0.
        return 0.0 if np.allclose(A, 0.0) else INF
    pos = lam > 1e-12 * lmax
    if not pos.all():
        null_vecs = U[:, ~pos]
        if np.linalg.norm(A @ null_vecs) > 1e-9 * lmax:
            return INF
    Up, lp = U[:, pos], lam[pos]
    # beta = lambda_max of S^{-1/2} A^T A S^{-1/2} on the positive subspace.
    B = (A @ Up) / np.sqrt(lp)
    return float(np.linalg.eigvalsh(B.T @ B).max())


def _affine_spec(kind: str, A: np.ndarray, b: np.ndarray,
                 solution: np.ndarray | None = None,
                 extra: dict[str, Any] | None = None) -> OperatorSpec:
    A, b = np.asarray(A, float), np.asarray(b, float)
    d = A.shape[0]
    if A.shape != (d, d) or b.shape != (d,):
        raise ValueError("A must be square and b of matching length")
    payload: dict[str, Any] = {"A": _frozen(A), "b": _frozen(b)}
    if solution is None and d and np.linalg.matrix_rank(A) == d:
        solution = np.linalg.solve(A, -b)
    if solution is not None:
        payload["solution"] = _frozen(solution)
    if extra:
        payload.update(extra)
    L = float(np.linalg.norm(A, 2))
    return OperatorSpec(dim=d, kind=kind, payload=payload, L=L,
                        beta=beta_affine(A), Lambda=0.0, is_affine=True)


def affine_operator(A: np.ndarray, b: np.ndarray, kind: str = "affine",
                    solution: np.ndarray | None = None) -> OperatorSpec:
    """Affine operator V(z) = Az + b with constants read off the spectra."""
    return _affine_spec(kind, A, b, solution=solution)


def regularize(op: OperatorSpec, center: np.ndarray, eta: float) -> OperatorSpec:
    """The (1/eta)-strongly monotone operator V(x) + (1/eta)(x - center)."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    center = _check_point(op, np.asarray(center, float))
    payload: dict[str, Any] = {"base": op, "center": _frozen(center), "eta": float(eta)}
    if op.is_affine:
        A, b = affine_parts(op)
        A_eff = A + np.eye(op.dim) / eta
        b_eff = b - center / eta
        payload["A"] = _frozen(A_eff)
        payload["b"] = _frozen(b_eff)
        payload["solution"] = _frozen(np.linalg.solve(A_eff, -b_eff))
        beta = beta_affine(A_eff)
    else:
        beta = INF
    return OperatorSpec(dim=op.dim, kind="regularized", payload=payload,
                        L=op.L + 1.0 / eta, G=INF, beta=beta,
                        Lambda=op.Lambda, is_affine=op.is_affine)


def operator_bound_on_ball(op: OperatorSpec, center: np.ndarray,
                           radius: float) -> float:
    """Upper bound on ||V|| over the ball of given radius (conservative)."""
    center = _check_point(op, np.asarray(center, float))
    if op.G < INF:
        return op.G
    v0 = float(np.linalg.norm(eval_operator(op, center)))
    return v0 + op.L * float(radius)


def _random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _random_skew(rng: np.random.Generator, d: int) -> np.ndarray:
    W = rng.standard_normal((d, d))
    return 0.5 * (W - W.T)


def make_test_problem(kind: str, dim: int, params: dict[str, Any] | None = None,
                      seed: int = 0) -> OperatorSpec:
    """Build a zoo operator with declared constants.

    Constants are exact for the affine kinds (spectra) and conservative
    for bounded-nonlinear.  Kind-specific params:

    - affine: L (default 1), mu (min sym eigenvalue, default 0.1 L),
      skew (relative skew weight, default 1.0), b_scale (default 1).
    - skew: L (default 1); b is zero, solution at the origin.
    - bilinear-saddle: L (default 1), b_scale (default 1); dim is split
      as dx + dy with dx = dim // 2.
    - quadratic-gradient: eig_range [lo, hi] (default [0.1, 1]),
      b_scale; optional requested beta is validated against L.
    - bounded-nonlinear: L (default 1), n_terms (default 2 dim),
      bias_scale (default 0.5).
    """
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if dim < 1:
        raise ValueError("dim must be a positive integer")

    if kind == "affine":
        L = float(params.pop("L", 1.0))
        if L <= 0:
            raise ValueError("affine kind requires L > 0")
        mu = float(params.pop("mu", 0.1 * L))
        if not 0 <= mu <= L:
            raise ValueError("need 0 <= mu <= L")
        skew_w = float(params.pop("skew", 1.0))
        b_scale = float(params.pop("b_scale", 1.0))
        _reject_unknown(kind, params)
        U = _random_orthogonal(rng, dim)
        lam = np.linspace(mu, max(mu, 0.8 * L), dim)
        S = (U * lam) @ U.T
        A = S + skew_w * _random_skew(rng, dim)
        A *= L / np.linalg.norm(A, 2)
        b = b_scale * rng.standard_normal(dim)
        return _affine_spec("affine", A, b)

    if kind == "skew":
        L = float(params.pop("L", 1.0))
        _reject_unknown(kind, params)
        J = np.zeros((dim, dim))
        for i in range(0, dim - 1, 2):
            J[i, i + 1], J[i + 1, i] = L, -L
        return _affine_spec("skew", J, np.zeros(dim),
                            solution=np.zeros(dim))

    if kind == "bilinear-saddle":
        L = float(params.pop("L", 1.0))
        b_scale = float(params.pop("b_scale", 1.0))
        dx = int(params.pop("dx", dim // 2))
        _reject_unknown(kind, params)
        dy = dim - dx
        if dx < 1 or dy < 1:
            raise ValueError("bilinear-saddle needs dim >= 2")
        B = rng.standard_normal((dx, dy))
        if dx == dy:
            # keep the coupling matrix comfortably nonsingular
            B += np.eye(dx) * np.linalg.norm(B, 2) * 0.1
        B *= L / np.linalg.norm(B, 2)
        c = b_scale * rng.standard_normal(dx)
        e = b_scale * rng.standard_normal(dy)
        A = np.block([[np.zeros((dx, dx)), B], [-B.T, np.zeros((dy, dy))]])
        b = np.concatenate([c, e])
        solution = None
        if dx == dy and np.linalg.matrix_rank(B) == dx:
            solution = np.concatenate(
                [np.linalg.solve(B.T, e), np.linalg.solve(B, -c)])
        return _affine_spec("bilinear-saddle", A, b, solution=solution,
                            extra={"B": _frozen(B), "dx": dx})

    if kind == "quadratic-gradient":
        lo, hi = params.pop("eig_range", (0.1, 1.0))
        b_scale = float(params.pop("b_scale", 1.0))
        want_beta = params.pop("beta", None)
        _reject_unknown(kind, params)
        if not 0 <= lo <= hi:
            raise ValueError("eig_range must satisfy 0 <= lo <= hi")
        if want_beta is not None and want_beta < hi:
            raise ValueError(
                f"requested beta {want_beta:g} < smoothness {hi:g}: a gradient "
                "field cannot be co-coercive below its Lipschitz constant")
        U = _random_orthogonal(rng, dim)
        lam = np.linspace(lo, hi, dim) if dim > 1 else np.array([hi])
        Q = (U * lam) @ U.T
        Q = 0.5 * (Q + Q.T)
        b = b_scale * rng.standard_normal(dim)
        return _affine_spec("quadratic-gradient", Q, b)

    if kind == "bounded-nonlinear":
        L = float(params.pop("L", 1.0))
        n_terms = int(params.pop("n_terms", 2 * dim))
        bias_scale = float(params.pop("bias_scale", 0.5))
        _reject_unknown(kind, params)
        C = rng.standard_normal((n_terms, dim))
        C *= math.sqrt(L) / np.linalg.norm(C, 2)
        b0 = bias_scale * rng.standard_normal(n_terms)
        row_norms = np.linalg.norm(C, axis=1)
        G = float(row_norms.sum())
        Lam = float(_TANH_CURVATURE * (row_norms ** 3).sum())
        L_exact = float(np.linalg.eigvalsh(C.T @ C).max())
        return OperatorSpec(dim=dim, kind="bounded-nonlinear",
                            payload={"C": _frozen(C), "b0": _frozen(b0)},
                            L=L_exact, G=G, beta=L_exact, Lambda=Lam)

    raise ValueError(f"unknown problem kind {kind!r}")


def _reject_unknown(kind: str, leftover: dict[str, Any]) -> None:
    if leftover:
        raise ValueError(f"unknown params for kind {kind!r}: {sorted(leftover)}")


def _sample_ball(rng: np.random.Generator, n: int, d: int,
                 radius: float) -> np.ndarray:
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / d)
    return u * r[:, None]


def verify_properties(op: OperatorSpec, n_pairs: int = 10_000,
                      domain_radius: float = 10.0,
                      seed: int = 0) -> PropertyReport:
    """Measure monotonicity/smoothness/co-coercivity on random pairs."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    z1 = _sample_ball(rng, n_pairs, op.dim, domain_radius)
    z2 = _sample_ball(rng, n_pairs, op.dim, domain_radius)
    v1, v2 = eval_operator(op, z1), eval_operator(op, z2)
    dz, dv = z1 - z2, v1 - v2
    inner = np.einsum("ij,ij->i", dv, dz)
    nz = np.linalg.norm(dz, axis=1)
    nv = np.linalg.norm(dv, axis=1)
    violations = int((inner < -1e-10).sum())
    ok = nz > 1e-12
    measured_L = float((nv[ok] / nz[ok]).max(initial=0.0))
    nv2 = nv ** 2
    live = nv2 > 1e-14
    if np.any(live & (inner <= 1e-12 * nv2)):
        measured_beta = INF
    elif live.any():
        measured_beta = float((nv2[live] / inner[live]).max())
    else:
        measured_beta = 0.0
    measured_G = float(max(np.linalg.norm(v1, axis=1).max(initial=0.0),
                           np.linalg.norm(v2, axis=1).max(initial=0.0)))
    return PropertyReport(monotone_violations=violations,
                          measured_L=measured_L,
                          measured_beta=measured_beta,
                          measured_G=measured_G,
                          pairs_tested=n_pairs)


def load_affine_text(path) -> OperatorSpec:
    """Load an affine operator from plain text: d, then d rows of A, then b."""
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens:
        raise ValueError(f"{path}: empty matrix file")
    d = int(tokens[0])
    need = 1 + d * d + d
    if len(tokens) != need:
        raise ValueError(
            f"{path}: expected {need} numbers for d={d}, found {len(tokens)}")
    vals = np.array([float(t) for t in tokens[1:]])
    A = vals[:d * d].reshape(d, d)
    b = vals[d * d:]
    return _affine_spec("affine", A, b)
