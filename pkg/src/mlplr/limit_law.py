"""Asymptotic law of the LR statistic under over-parameterization.

Builds the finite basis of limit score functions, estimates its Gram
matrix under the true law, certifies the linear-independence assumption
numerically, and simulates the limiting distribution

    sup over the index set of (max(W, 0))^2,

a supremum of a truncated Gaussian process over a union of cones indexed
by partitions of the fitted units onto the true ones.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .model import (
    ConstraintBox,
    RegressionSpec,
    augment,
    draw_inputs,
    stable_hash,
    transfer_eval,
)

# ---------------------------------------------------------------------------
# Partitions of fitted units onto true units
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Grouping vector t = (t_0, ..., t_k0) with 0 = t_0 < ... < t_k0 <= k.

    Group i (1-based) collects the fitted units t_{i-1}+1 .. t_i; units
    beyond t_k0 are free (unassigned).
    """

    t: tuple[int, ...]

    def __post_init__(self):
        t = tuple(int(v) for v in self.t)
        object.__setattr__(self, "t", t)
        if len(t) < 2 or t[0] != 0:
            raise ValueError(f"partition must start at t_0 = 0, got {t}")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"partition must be strictly increasing, got {t}")

    @property
    def k0(self) -> int:
        return len(self.t) - 1

    @property
    def total_units(self) -> int:
        """t_k0, the number of fitted units assigned to some true unit."""
        return self.t[-1]

    def group(self, i: int) -> range:
        """1-based fitted-unit indices of group i (i in 1..k0)."""
        return range(self.t[i - 1] + 1, self.t[i] + 1)

    def group_sizes(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.t, self.t[1:]))

    def group_of(self, j: int) -> int:
        """Group index (1-based) of fitted unit j <= t_k0."""
        for i in range(1, self.k0 + 1):
            if j <= self.t[i]:
                return i
        raise ValueError(f"unit {j} is not assigned by partition {self.t}")


def enumerate_partitions(k: int, k0: int) -> list[Partition]:
    """All admissible t vectors, in lexicographic order."""
    if not (k >= k0 >= 1):
        raise ValueError(f"need k >= k0 >= 1, got k={k}, k0={k0}")
    return [Partition((0, *combo)) for combo in itertools.combinations(range(1, k + 1), k0)]


# ---------------------------------------------------------------------------
# Limit score basis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreBasis:
    """Ordered x-part basis B(x) of the limit scores V(z) = e(z) B(x).

    Layout (augmented input xt = (1, x), true weights w_i, i = 0..k0-1):
      [0]                      constant 1
      [1 .. k0]                phi(w_i^T xt)
      [next k0*(d+1)]          xt_l * phi'(w_i^T xt),      0 <= l <= d
      [next k0*(d+1)(d+2)/2]   xt_l xt_m * phi''(w_i^T xt), 0 <= l <= m <= d
      [optional tail]          phi(w^T xt) on a fixed grid of extra weights
    """

    k0: int
    d: int
    extra_w: tuple[tuple[float, ...], ...] = ()

    @property
    def n_pairs(self) -> int:
        return (self.d + 1) * (self.d + 2) // 2

    @property
    def n_linear(self) -> int:
        """Constant + phi + phi' components (the always-linear block)."""
        return 1 + self.k0 + self.k0 * (self.d + 1)

    @property
    def core_dim(self) -> int:
        return self.n_linear + self.k0 * self.n_pairs

    @property
    def dim(self) -> int:
        return self.core_dim + len(self.extra_w)

    def const_index(self) -> int:
        return 0

    def phi_index(self, i: int) -> int:
        self._check_unit(i)
        return 1 + i

    def dphi_index(self, i: int, l: int) -> int:
        self._check_unit(i)
        if not 0 <= l <= self.d:
            raise ValueError(f"coordinate l={l} out of range 0..{self.d}")
        return 1 + self.k0 + i * (self.d + 1) + l

    def ddphi_index(self, i: int, l: int, m: int) -> int:
        self._check_unit(i)
        if not 0 <= l <= m <= self.d:
            raise ValueError(f"need 0 <= l <= m <= d, got ({l}, {m})")
        # pairs (l, m) in lexicographic order
        offset = l * (self.d + 1) - l * (l - 1) // 2 + (m - l)
        return self.n_linear + i * self.n_pairs + offset

    def extra_index(self, j: int) -> int:
        if not 0 <= j < len(self.extra_w):
            raise ValueError(f"extra column {j} out of range")
        return self.core_dim + j

    def _check_unit(self, i: int) -> None:
        if not 0 <= i < self.k0:
            raise ValueError(f"unit index {i} out of range 0..{self.k0 - 1}")

    def labels(self) -> list[str]:
        out = ["1"]
        out += [f"phi_{i}" for i in range(self.k0)]
        out += [f"x{l}*dphi_{i}" for i in range(self.k0) for l in range(self.d + 1)]
        out += [
            f"x{l}*x{m}*ddphi_{i}"
            for i in range(self.k0)
            for l in range(self.d + 1)
            for m in range(l, self.d + 1)
        ]
        out += [f"phi(w_extra{j})" for j in range(len(self.extra_w))]
        return out


def eval_score_basis_batch(spec: RegressionSpec, X: np.ndarray, basis: ScoreBasis | None = None) -> np.ndarray:
    """B(x) for every row of X; shape (n, basis.dim)."""
    if basis is None:
        basis = ScoreBasis(spec.k0, spec.input_dim)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"inputs have shape {X.shape}, expected (n, {spec.input_dim})")
    n = X.shape[0]
    Xa = augment(X)
    out = np.empty((n, basis.dim))
    out[:, 0] = 1.0
    for i, unit in enumerate(spec.theta0.units):
        t = Xa @ unit.w
        out[:, basis.phi_index(i)] = transfer_eval(t, 0)
        d1 = transfer_eval(t, 1)
        d2 = transfer_eval(t, 2)
        for l in range(spec.input_dim + 1):
            out[:, basis.dphi_index(i, l)] = Xa[:, l] * d1
        for l in range(spec.input_dim + 1):
            for m in range(l, spec.input_dim + 1):
                out[:, basis.ddphi_index(i, l, m)] = Xa[:, l] * Xa[:, m] * d2
    for j, w in enumerate(basis.extra_w):
        out[:, basis.extra_index(j)] = transfer_eval(Xa @ np.asarray(w), 0)
    return out


def eval_score_basis(spec: RegressionSpec, x, basis: ScoreBasis | None = None) -> np.ndarray:
    """B(x) at a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a single input vector")
    return eval_score_basis_batch(spec, x[None, :], basis)[0]


def extended_grid(box: ConstraintBox, d: int, n_angles: int = 8, radii: tuple[float, ...] = (1.0, 2.0)) -> tuple[tuple[float, ...], ...]:
    """Fixed grid of extra weight vectors inside the box (for the
    appendix-variant index set with free-unit phi terms)."""
    dirs: list[np.ndarray] = []
    if d == 1:
        # half circle only (phi(t) + phi(-t) = 1 makes antipodal directions
        # linearly dependent with the constant component), offset so no
        # grid point is a pure-bias, constant-in-x unit
        for ang in np.linspace(0.0, np.pi, n_angles, endpoint=False) + np.pi / (2 * n_angles):
            dirs.append(np.array([np.cos(ang), np.sin(ang)]))
    else:
        rng = np.random.default_rng(20240601)
        for _ in range(n_angles):
            v = rng.standard_normal(d + 1)
            dirs.append(v / np.linalg.norm(v))
    grid = []
    for r in radii:
        if not box.eta <= r <= box.M:
            raise ValueError(f"grid radius {r} outside [eta, M]")
        for u in dirs:
            grid.append(tuple(float(v) for v in r * u))
    return tuple(grid)


# ---------------------------------------------------------------------------
# Gram matrix and the linear-independence certificate
# ---------------------------------------------------------------------------


@dataclass
class GramMatrix:
    """L2 Gram of the limit scores: sigma = P(V V^T) = x_gram / sigma2."""

    sigma: np.ndarray
    x_gram: np.ndarray
    mc_draws: int
    seed: int
    basis: ScoreBasis
    method: str = "mc"


def _finalize_gram(x_gram: np.ndarray, spec: RegressionSpec, draws: int, seed: int, basis: ScoreBasis, method: str) -> GramMatrix:
    x_gram = 0.5 * (x_gram + x_gram.T)
    return GramMatrix(x_gram / spec.sigma2, x_gram, draws, seed, basis, method)


def gram_matrix(
    spec: RegressionSpec,
    mc_draws: int,
    seed: int,
    basis: ScoreBasis | None = None,
    chunk: int = 50_000,
) -> GramMatrix:
    """Monte-Carlo estimate of E[B(X) B(X)^T] under the input law.

    The residual factor is exact: E[e^2] = 1/sigma2 with e independent of
    X, so sigma = x_gram / sigma2. Accumulation runs over fixed-size
    chunks in a fixed order, so the result is reproducible bit for bit.
    """
    if mc_draws < 1:
        raise ValueError("mc_draws must be at least 1")
    if basis is None:
        basis = ScoreBasis(spec.k0, spec.input_dim)
    rng = np.random.default_rng(seed)
    acc = np.zeros((basis.dim, basis.dim))
    left = mc_draws
    while left > 0:
        m = min(chunk, left)
        B = eval_score_basis_batch(spec, draw_inputs(spec, m, rng), basis)
        acc += B.T @ B
        left -= m
    return _finalize_gram(acc / mc_draws, spec, mc_draws, seed, basis, "mc")


def gram_matrix_gh(spec: RegressionSpec, nodes: int = 129, basis: ScoreBasis | None = None) -> GramMatrix:
    """Gauss-Hermite quadrature Gram, exact cross-check for d = 1 with
    standard normal inputs."""
    if spec.input_dim != 1 or spec.input_law != "standard_normal":
        raise ValueError("Gauss-Hermite mode needs d = 1 and standard normal inputs")
    if basis is None:
        basis = ScoreBasis(spec.k0, spec.input_dim)
    pts, wts = np.polynomial.hermite.hermgauss(nodes)
    X = (np.sqrt(2.0) * pts)[:, None]
    w = wts / np.sqrt(np.pi)
    B = eval_score_basis_batch(spec, X, basis)
    return _finalize_gram((B * w[:, None]).T @ B, spec, nodes, 0, basis, "gauss_hermite")


@dataclass
class H4Report:
    """Numerical certificate for the linear-independence assumption."""

    min_eigenvalue: float  # of the unit-diagonal-scaled x_gram
    passed: bool
    raw_min_eigenvalue: float
    tol: float


def check_h4(gram: GramMatrix, tol: float = 1e-8) -> H4Report:
    """Smallest eigenvalue of the diagonally normalized x_gram.

    Linear independence of the basis functions is scale invariant, so the
    certificate normalizes each function to unit L2 norm first (otherwise
    the verdict would depend on the arbitrary scaling of the phi''
    components). A zero-norm column counts as an exact dependence.
    """
    G = np.asarray(gram.x_gram, dtype=float)
    raw = float(np.linalg.eigvalsh(0.5 * (G + G.T)).min())
    diag = np.diag(G).copy()
    if np.any(diag <= 0):
        return H4Report(0.0, False, raw, tol)
    s = 1.0 / np.sqrt(diag)
    C = G * np.outer(s, s)
    mn = float(np.linalg.eigvalsh(0.5 * (C + C.T)).min())
    return H4Report(mn, bool(mn >= tol), raw, tol)


def save_gram(gram: GramMatrix, prefix: str, spec: RegressionSpec) -> None:
    """Textual row-major matrix plus JSON metadata."""
    with open(f"{prefix}.mat", "w") as fh:
        for row in gram.x_gram:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    meta = {
        "seed": gram.seed,
        "mc_draws": gram.mc_draws,
        "method": gram.method,
        "spec_hash": stable_hash(spec.to_dict()),
        "sigma2": spec.sigma2,
        "k0": gram.basis.k0,
        "d": gram.basis.d,
        "extra_w": [list(w) for w in gram.basis.extra_w],
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(meta, fh, indent=2)


def load_gram(prefix: str) -> GramMatrix:
    with open(f"{prefix}.json") as fh:
        meta = json.load(fh)
    rows = []
    with open(f"{prefix}.mat") as fh:
        for line in fh:
            if line.strip():
                rows.append([float(v) for v in line.split()])
    x_gram = np.array(rows)
    basis = ScoreBasis(meta["k0"], meta["d"], tuple(tuple(w) for w in meta["extra_w"]))
    if x_gram.shape != (basis.dim, basis.dim):
        raise ValueError(f"matrix shape {x_gram.shape} does not match basis dim {basis.dim}")
    return GramMatrix(x_gram / meta["sigma2"], x_gram, meta["mc_draws"], meta["seed"], basis, meta["method"])


# ---------------------------------------------------------------------------
# Second-order feasibility (the delta(i) gate)
# ---------------------------------------------------------------------------


def delta_feasible(nus: list[np.ndarray], lb: float = 1e-9) -> bool:
    """True iff strictly positive c_j exist with sum_j c_j nu_j = 0.

    Rescaling q_j = c_j^2 / sum c^2 then yields a probability vector with
    sum_j sqrt(q_j) nu_j = 0. Decided by a linear feasibility program with
    c_j >= lb after normalizing the inputs; an all-zero list is feasible.
    """
    if len(nus) == 0:
        raise ValueError("need at least one vector")
    V = np.stack([np.asarray(v, dtype=float) for v in nus])
    scale = np.max(np.linalg.norm(V, axis=1))
    if scale == 0.0:
        return True
    V = V / scale
    m = V.shape[0]
    A_eq = np.vstack([V.T, np.ones((1, m))])
    b_eq = np.concatenate([np.zeros(V.shape[1]), [1.0]])
    res = linprog(
        c=np.zeros(m),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=[(lb, None)] * m,
        method="highs",
    )
    return bool(res.status == 0)


# ---------------------------------------------------------------------------
# Cone descriptions and normalization
# ---------------------------------------------------------------------------


def normalize_score(c: np.ndarray, gram: GramMatrix) -> np.ndarray:
    """Rescale a coefficient vector to unit L2 norm in the Gram metric."""
    c = np.asarray(c, dtype=float)
    nrm2 = float(c @ gram.sigma @ c)
    if nrm2 <= 0.0:
        raise ValueError("cannot normalize a score with non-positive squared norm")
    return c / np.sqrt(nrm2)


def quad_block_coefficients(A: np.ndarray, d: int) -> np.ndarray:
    """Coefficients of x~^T A x~ on the ordered pair components (l <= m)."""
    A = np.asarray(A, dtype=float)
    out = []
    for l in range(d + 1):
        for m in range(l, d + 1):
            out.append(A[l, l] if l == m else 2.0 * A[l, m])
    return np.array(out)


@dataclass
class ConeSpec:
    """One admissible cone: a partition plus per-group quadratic envelopes.

    Group i admits sg(a_i^0) * A_i with A_i PSD of rank at most m_i - 1, so
    singleton groups carry no quadratic term at all.
    """

    partition: Partition
    basis: ScoreBasis
    signs: np.ndarray  # sg(a_i^0), one per true unit

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=float)
        if len(self.signs) != self.partition.k0 or self.partition.k0 != self.basis.k0:
            raise ValueError("partition, basis and signs disagree on k0")

    def rank_budget(self, i: int) -> int:
        """Largest admissible rank of A_i (group i, 1-based)."""
        m = self.partition.group_sizes()[i - 1]
        return min(m - 1, self.basis.d + 1)

    def coefficient_vector(
        self,
        gamma: float,
        eps: np.ndarray,
        zeta: np.ndarray,
        A_list: list[np.ndarray | None],
    ) -> np.ndarray:
        """Flat basis coefficients of one element of the cone.

        eps has shape (k0,), zeta (k0, d+1); A_list holds one PSD matrix
        (or None) per group and is validated against the rank budget.
        """
        b = self.basis
        c = np.zeros(b.dim)
        c[b.const_index()] = gamma
        for i in range(b.k0):
            c[b.phi_index(i)] = eps[i]
            for l in range(b.d + 1):
                c[b.dphi_index(i, l)] = zeta[i][l]
        for i in range(1, b.k0 + 1):
            A = A_list[i - 1]
            if A is None:
                continue
            A = np.asarray(A, dtype=float)
            evals = np.linalg.eigvalsh(0.5 * (A + A.T))
            if evals.min() < -1e-10:
                raise ValueError(f"quadratic envelope of group {i} is not PSD")
            if np.sum(evals > 1e-12 * max(evals.max(), 1.0)) > self.rank_budget(i):
                raise ValueError(
                    f"quadratic envelope of group {i} exceeds rank budget {self.rank_budget(i)}"
                )
            coeffs = self.signs[i - 1] * quad_block_coefficients(A, b.d)
            pos = 0
            for l in range(b.d + 1):
                for m in range(l, b.d + 1):
                    c[b.ddphi_index(i - 1, l, m)] += coeffs[pos]
                    pos += 1
        return c


# ---------------------------------------------------------------------------
# Simulation of the limiting distribution
# ---------------------------------------------------------------------------


@dataclass
class ConeOptSettings:
    """Inner maximizer controls for the per-draw supremum."""

    angle_grid: int = 64
    golden_iters: int = 48
    restarts: int = 8  # direction restarts for d > 1
    sweeps: int = 3  # coordinate-ascent sweeps over quadratic directions


@dataclass
class LimitSample:
    """Draws of the simulated limit of the doubled LR statistic."""

    values: np.ndarray
    k: int
    k0: int
    d: int
    best_partition: list[tuple[int, ...]] = field(default_factory=list)
    restarts_used: np.ndarray | None = None
    extended: bool = False

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("value,best_partition,restarts\n")
            for i, v in enumerate(self.values):
                t = "-".join(str(x) for x in self.best_partition[i]) if self.best_partition else ""
                r = int(self.restarts_used[i]) if self.restarts_used is not None else 0
                fh.write(f"{repr(float(v))},{t},{r}\n")


def _direction_columns(basis: ScoreBasis, unit: int, sign: float, u: np.ndarray) -> np.ndarray:
    """Basis column of sg * (u^T x~)^2 * phi''_unit for unit direction(s) u.

    u has shape (..., d+1); returns shape (..., basis.dim).
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape[:-1] + (basis.dim,))
    for l in range(basis.d + 1):
        for m in range(l, basis.d + 1):
            fac = 1.0 if l == m else 2.0
            out[..., basis.ddphi_index(unit, l, m)] = sign * fac * u[..., l] * u[..., m]
    return out


class _ConeMaximizer:
    """Per-partition supremum of (max(c^T g, 0))^2 / (c^T sigma c).

    The linear block enters unconstrained; each quadratic direction
    contributes a column whose coefficient must stay non-negative. With a
    handful of sign-constrained columns the exact cone projection is found
    by enumerating active subsets.
    """

    def __init__(self, gram: GramMatrix, lin_idx: np.ndarray, ridge: float = 1e-12):
        self.sigma = gram.sigma
        self.basis = gram.basis
        self.lin = lin_idx
        self.S_ll = gram.sigma[np.ix_(lin_idx, lin_idx)]
        self.ridge = ridge * float(np.trace(self.S_ll)) / len(lin_idx)

    def linear_values(self, g: np.ndarray) -> np.ndarray:
        gl = g[:, self.lin]
        sol = np.linalg.solve(self.S_ll, gl.T).T
        return np.einsum("ij,ij->i", gl, sol)

    def values_with_columns(self, g: np.ndarray, cols: np.ndarray, v_lin: np.ndarray) -> np.ndarray:
        """Best value per draw given per-draw sign-constrained columns.

        g (N, p); cols (N, R, p). Exact via enumeration over the 2^R
        active subsets (R is at most a few at desk scale).
        """
        N, R, _ = cols.shape
        n_lin = len(self.lin)
        Sc = np.einsum("nrp,pq->nrq", cols, self.sigma)
        cross = Sc[:, :, self.lin]  # (N, R, n_lin)
        quad = np.einsum("nrp,nsp->nrs", Sc, cols)  # (N, R, R)
        y_quad = np.einsum("nrp,np->nr", cols, g)
        best = v_lin.copy()
        for mask in range(1, 2**R):
            sel = [r for r in range(R) if mask >> r & 1]
            ns = len(sel)
            dim = n_lin + ns
            A = np.empty((N, dim, dim))
            A[:, :n_lin, :n_lin] = self.S_ll
            A[:, n_lin:, :n_lin] = cross[:, sel, :]
            A[:, :n_lin, n_lin:] = np.swapaxes(cross[:, sel, :], 1, 2)
            A[:, n_lin:, n_lin:] = quad[:, sel][:, :, sel]
            A[:, range(n_lin, dim), range(n_lin, dim)] += self.ridge
            y = np.concatenate([g[:, self.lin], y_quad[:, sel]], axis=1)
            b = np.linalg.solve(A, y[..., None])[..., 0]
            val = np.einsum("nj,nj->n", b, y)
            feasible = np.all(b[:, n_lin:] >= -1e-12, axis=1)
            np.maximum(best, np.where(feasible, val, -np.inf), out=best)
        return best


def _angle_to_dirs(om: np.ndarray) -> np.ndarray:
    return np.stack([np.cos(om), np.sin(om)], axis=-1)


def _optimize_partition_d1(
    mx: _ConeMaximizer,
    g: np.ndarray,
    v_lin: np.ndarray,
    quad_units: list[tuple[int, float]],
    opt: ConeOptSettings,
    fixed_cols: np.ndarray | None = None,
) -> np.ndarray:
    """Coordinate ascent over one angle per quadratic direction (d = 1)."""
    N = g.shape[0]
    R = len(quad_units)
    base = np.zeros((N, 0, mx.basis.dim)) if fixed_cols is None else fixed_cols

    def all_cols(angles: np.ndarray) -> np.ndarray:
        cols = [
            _direction_columns(mx.basis, unit, sign, _angle_to_dirs(angles[:, r]))
            for r, (unit, sign) in enumerate(quad_units)
        ]
        return np.concatenate([base, np.stack(cols, axis=1)], axis=1)

    # stagger initial angles so coinciding directions never start degenerate
    angles = np.tile(np.arange(R) * np.pi / max(R, 1), (N, 1))
    grid = np.linspace(0.0, np.pi, opt.angle_grid, endpoint=False)
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    n_sweeps = opt.sweeps if R > 1 else 1
    best = v_lin.copy()
    for _ in range(n_sweeps):
        for r in range(R):
            cand = angles.copy()
            best_r = np.full(N, -np.inf)
            best_ang = angles[:, r].copy()
            for om in grid:
                cand[:, r] = om
                val = mx.values_with_columns(g, all_cols(cand), v_lin)
                upd = val > best_r
                best_ang[upd] = om
                best_r[upd] = val[upd]
            lo = best_ang - np.pi / opt.angle_grid
            hi = best_ang + np.pi / opt.angle_grid
            for _ in range(opt.golden_iters):
                m1 = hi - gr * (hi - lo)
                m2 = lo + gr * (hi - lo)
                cand[:, r] = m1
                v1 = mx.values_with_columns(g, all_cols(cand), v_lin)
                cand[:, r] = m2
                v2 = mx.values_with_columns(g, all_cols(cand), v_lin)
                take1 = v1 >= v2
                hi = np.where(take1, m2, hi)
                lo = np.where(take1, lo, m1)
            angles[:, r] = 0.5 * (lo + hi)
            val = mx.values_with_columns(g, all_cols(angles), v_lin)
            np.maximum(best, np.maximum(val, best_r), out=best)
    return best


def _optimize_partition_general(
    mx: _ConeMaximizer,
    g: np.ndarray,
    v_lin: np.ndarray,
    quad_units: list[tuple[int, float]],
    opt: ConeOptSettings,
    seed_key: tuple,
    fixed_cols: np.ndarray | None = None,
) -> np.ndarray:
    """Sphere search for d > 1: deterministic restarts refined by golden
    rotations in coordinate planes (batched across draws)."""
    N = g.shape[0]
    p1 = mx.basis.d + 1
    R = len(quad_units)
    base = np.zeros((N, 0, mx.basis.dim)) if fixed_cols is None else fixed_cols
    rng = np.random.default_rng([abs(hash(seed_key)) % 2**32])
    gr = (np.sqrt(5.0) - 1.0) / 2.0
    best = v_lin.copy()
    for _ in range(max(opt.restarts, 1)):
        U = rng.standard_normal((R, p1))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        dirs = np.tile(U[None, :, :], (N, 1, 1))

        def cols_from(dirs_arr: np.ndarray) -> np.ndarray:
            cols = [
                _direction_columns(mx.basis, unit, sign, dirs_arr[:, r, :])
                for r, (unit, sign) in enumerate(quad_units)
            ]
            return np.concatenate([base, np.stack(cols, axis=1)], axis=1)

        for _ in range(opt.sweeps):
            for r in range(R):
                for axis in range(p1):
                    e = np.zeros(p1)
                    e[axis] = 1.0
                    u = dirs[:, r, :]
                    # orthonormal partner in the (u, e_axis) plane
                    v = e[None, :] - (u @ e)[:, None] * u
                    nv = np.linalg.norm(v, axis=1)
                    ok = nv > 1e-12
                    v[ok] /= nv[ok][:, None]
                    lo = np.full(N, -np.pi / 2)
                    hi = np.full(N, np.pi / 2)
                    for _ in range(opt.golden_iters // 2):
                        m1 = hi - gr * (hi - lo)
                        m2 = lo + gr * (hi - lo)
                        d1 = dirs.copy()
                        d1[:, r, :] = np.cos(m1)[:, None] * u + np.sin(m1)[:, None] * v
                        v1 = mx.values_with_columns(g, cols_from(d1), v_lin)
                        d2 = dirs.copy()
                        d2[:, r, :] = np.cos(m2)[:, None] * u + np.sin(m2)[:, None] * v
                        v2 = mx.values_with_columns(g, cols_from(d2), v_lin)
                        take1 = v1 >= v2
                        hi = np.where(take1, m2, hi)
                        lo = np.where(take1, lo, m1)
                    ang = 0.5 * (lo + hi)
                    nd = np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * v
                    nd[~ok] = u[~ok]
                    dirs[:, r, :] = nd
        np.maximum(best, mx.values_with_columns(g, cols_from(dirs), v_lin), out=best)
    return best


def _greedy_extra_columns(
    mx: _ConeMaximizer,
    g: np.ndarray,
    v_lin: np.ndarray,
    n_free: int,
) -> np.ndarray:
    """Per-draw greedy choice of up to n_free extra phi columns.

    Extra columns are sign-free, so each chosen column simply joins the
    draw's linear system; returns per-draw fixed columns (N, chosen, p).
    """
    basis = mx.basis
    n_extra = len(basis.extra_w)
    N = g.shape[0]
    chosen = np.zeros((N, 0, basis.dim))
    take = min(n_free, n_extra)
    used = np.zeros((N, n_extra), dtype=bool)
    for _ in range(take):
        best_val = np.full(N, -np.inf)
        best_j = np.zeros(N, dtype=int)
        best_sign = np.ones(N)
        for j in range(n_extra):
            col = np.zeros(basis.dim)
            col[basis.extra_index(j)] = 1.0
            cols = np.concatenate([chosen, np.tile(col, (N, 1, 1))], axis=1)
            # sign-free column: evaluate with both orientations
            v_plus = mx.values_with_columns(g, cols, v_lin)
            cols[:, -1, :] *= -1.0
            v_minus = mx.values_with_columns(g, cols, v_lin)
            val = np.where(used[:, j], -np.inf, np.maximum(v_plus, v_minus))
            upd = val > best_val
            best_val[upd] = val[upd]
            best_j[upd] = j
            best_sign[upd] = np.where(v_minus[upd] > v_plus[upd], -1.0, 1.0)
        add = np.zeros((N, 1, basis.dim))
        add[np.arange(N), 0, basis.core_dim + best_j] = best_sign
        chosen = np.concatenate([chosen, add], axis=1)
        used[np.arange(N), best_j] = True
    return chosen


def simulate_limit(
    spec: RegressionSpec,
    k: int,
    gram: GramMatrix,
    n_draws: int,
    seed: int,
    opt: ConeOptSettings | None = None,
    extended: bool = False,
    h4_tol: float = 1e-8,
) -> LimitSample:
    """Monte-Carlo sample of the limiting LR distribution at width k.

    Per draw, a Gaussian vector g ~ N(0, sigma) is sampled and the
    supremum of (max(c^T g, 0))^2 / (c^T sigma c) is maximized over every
    partition's cone of realizable coefficient vectors; the normalization
    sits in the Rayleigh denominator so the scale of c is immaterial.
    Deterministic given the seed (draw i uses the stream (seed, i)).
    """
    if opt is None:
        opt = ConeOptSettings()
    k0, d = spec.k0, spec.input_dim
    if k < k0:
        raise ValueError(f"need k >= k0, got k={k} < k0={k0}")
    if gram.basis.k0 != k0 or gram.basis.d != d:
        raise ValueError("gram matrix was built for a different spec")
    if extended and not gram.basis.extra_w:
        raise ValueError("extended mode needs a gram with extra phi columns")
    # the certificate concerns the theorem's basis; extra grid columns are
    # auxiliary and may be arbitrarily correlated with each other
    core = gram.basis.core_dim
    core_gram = GramMatrix(
        gram.sigma[:core, :core], gram.x_gram[:core, :core],
        gram.mc_draws, gram.seed, ScoreBasis(k0, d), gram.method,
    )
    rep = check_h4(core_gram, tol=h4_tol)
    if not rep.passed:
        raise ValueError(
            f"gram fails the linear-independence certificate "
            f"(min scaled eigenvalue {rep.min_eigenvalue:.3e} < {h4_tol:.1e})"
        )
    p = gram.basis.dim
    # Cholesky keeps the factor nested in the basis prefix, so draws on a
    # common seed stay comparable draw by draw across widths and between
    # the core and extended index sets
    try:
        factor = np.linalg.cholesky(gram.sigma)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * float(np.trace(gram.sigma)) / p
        factor = np.linalg.cholesky(gram.sigma + jitter * np.eye(p))
    g = np.empty((n_draws, p))
    for i in range(n_draws):
        g[i] = factor @ np.random.default_rng([seed, i]).standard_normal(p)

    lin_idx = np.arange(gram.basis.n_linear)
    mx = _ConeMaximizer(gram, lin_idx)
    v_lin = mx.linear_values(g)
    signs = np.sign([u.a for u in spec.theta0.units])

    partitions = enumerate_partitions(k, k0)
    per_part = np.empty((len(partitions), n_draws))
    for pi, part in enumerate(partitions):
        sizes = part.group_sizes()
        quad_units = []
        for i in range(1, k0 + 1):
            budget = min(sizes[i - 1] - 1, d + 1)
            quad_units.extend((i - 1, float(signs[i - 1])) for _ in range(budget))
        fixed = None
        if extended:
            n_free = k - part.total_units
            if n_free > 0:
                fixed = _greedy_extra_columns(mx, g, v_lin, n_free)
        if not quad_units and fixed is None:
            per_part[pi] = v_lin
        elif not quad_units:
            per_part[pi] = mx.values_with_columns(g, fixed, v_lin)
        elif d == 1:
            per_part[pi] = _optimize_partition_d1(mx, g, v_lin, quad_units, opt, fixed)
        else:
            per_part[pi] = _optimize_partition_general(
                mx, g, v_lin, quad_units, opt, (seed, part.t), fixed
            )
    best_idx = np.argmax(per_part, axis=0)
    values = per_part[best_idx, np.arange(n_draws)]
    return LimitSample(
        values=values,
        k=k,
        k0=k0,
        d=d,
        best_partition=[partitions[i].t for i in best_idx],
        restarts_used=np.zeros(n_draws, dtype=int),
        extended=extended,
    )
