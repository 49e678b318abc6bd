"""One-hidden-layer MLP regression model: transfer function, parameters,
constraint set and synthetic data generation.

The regression function is F(x) = beta + sum_i a_i * phi(w_i^T x~), where
x~ = (1, x_1, ..., x_d) is the augmented input and w_i[0] is the unit bias.
The feasible set is defined by ||w_i|| >= eta, an amplitude lower bound and
||theta|| <= M (Euclidean norms on the flattened parameter vector).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np


def stable_hash(payload: dict) -> str:
    """Short reproducibility hash of a JSON-serializable configuration."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]

# ---------------------------------------------------------------------------
# Transfer function
# ---------------------------------------------------------------------------


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # sign-split form: never evaluates exp on a positive argument
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


def transfer_eval(t, order: int = 0):
    """Evaluate the sigmoid transfer function or one of its derivatives.

    Parameters
    ----------
    t : float or ndarray
        Evaluation point(s).
    order : int
        0 for phi, 1..3 for the first three derivatives.

    All four orders are bounded on the real line.
    """
    if order not in (0, 1, 2, 3):
        raise ValueError(f"order must be in 0..3, got {order}")
    scalar = np.isscalar(t)
    s = _sigmoid(np.atleast_1d(t))
    if order == 0:
        out = s
    elif order == 1:
        out = s * (1.0 - s)
    elif order == 2:
        out = s * (1.0 - s) * (1.0 - 2.0 * s)
    else:
        d1 = s * (1.0 - s)
        d2 = d1 * (1.0 - 2.0 * s)
        out = d2 * (1.0 - 2.0 * s) - 2.0 * d1 * d1
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class TransferFunction:
    """Bounded transfer function with evaluators for orders 0..3."""

    kind: str = "sigmoid"

    def __post_init__(self):
        if self.kind != "sigmoid":
            raise ValueError(f"unsupported transfer function kind: {self.kind!r}")

    def eval(self, t, order: int = 0):
        return transfer_eval(t, order)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class HiddenUnit:
    """One hidden unit: amplitude a and weight vector w with w[0] the bias."""

    a: float
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 1:
            raise ValueError("unit weight vector must be one-dimensional")


@dataclass
class MlpParams:
    """Full parameter vector (beta, a_1..a_k, w_1..w_k) of a k-unit MLP."""

    beta: float
    units: list[HiddenUnit]

    def __post_init__(self):
        if len(self.units) < 1:
            raise ValueError("an MLP needs at least one hidden unit")
        lengths = {len(u.w) for u in self.units}
        if len(lengths) != 1:
            raise ValueError(f"inconsistent weight vector lengths: {sorted(lengths)}")

    @property
    def k(self) -> int:
        return len(self.units)

    @property
    def input_dim(self) -> int:
        return len(self.units[0].w) - 1

    def flatten(self) -> np.ndarray:
        """(beta, a_1..a_k, w_10..w_1d, ..., w_k0..w_kd); length k(d+2)+1."""
        parts = [np.array([self.beta])]
        parts.append(np.array([u.a for u in self.units], dtype=float))
        parts.extend(u.w for u in self.units)
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, vec: np.ndarray, k: int, d: int) -> "MlpParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (k * (d + 2) + 1,):
            raise ValueError(f"expected length {k * (d + 2) + 1}, got {vec.shape}")
        beta = float(vec[0])
        amps = vec[1 : 1 + k]
        ws = vec[1 + k :].reshape(k, d + 1)
        return cls(beta, [HiddenUnit(float(a), w.copy()) for a, w in zip(amps, ws)])

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "units": [{"a": u.a, "w": u.w.tolist()} for u in self.units],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        return cls(
            float(d["beta"]),
            [HiddenUnit(float(u["a"]), np.asarray(u["w"], dtype=float)) for u in d["units"]],
        )


def augment(x: np.ndarray) -> np.ndarray:
    """Prepend the constant coordinate: x -> (1, x_1, ..., x_d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.concatenate([[1.0], x])
    return np.hstack([np.ones((x.shape[0], 1)), x])


def mlp_forward(theta: MlpParams, x) -> float:
    """Evaluate F(x) = beta + sum_i a_i phi(w_i^T x~) at a single input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) != theta.input_dim:
        raise ValueError(f"input has shape {x.shape}, expected ({theta.input_dim},)")
    xa = augment(x)
    val = theta.beta
    for u in theta.units:
        val += u.a * transfer_eval(float(u.w @ xa), 0)
    return float(val)


def mlp_forward_batch(theta: MlpParams, X: np.ndarray) -> np.ndarray:
    """Vectorized forward pass over the rows of X (shape (n, d))."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != theta.input_dim:
        raise ValueError(f"inputs have shape {X.shape}, expected (n, {theta.input_dim})")
    Xa = augment(X)
    W = np.stack([u.w for u in theta.units])
    a = np.array([u.a for u in theta.units])
    return theta.beta + _sigmoid(Xa @ W.T) @ a


# ---------------------------------------------------------------------------
# Constraint set
# ---------------------------------------------------------------------------


@dataclass
class ConstraintBox:
    """Compact feasible set: ||w_i|| >= eta, amplitude bound, ||theta|| <= M.

    With positive_amplitudes on (the default, needed for sigmoid
    identifiability) the amplitude constraint is a_i >= eta; otherwise
    |a_i| >= eta.
    """

    eta: float
    M: float
    positive_amplitudes: bool = True

    def __post_init__(self):
        if not (self.eta > 0):
            raise ValueError("eta must be positive")
        if not (self.eta < self.M):
            raise ValueError("eta must be smaller than M")

    def to_dict(self) -> dict:
        return {"eta": self.eta, "M": self.M, "positive_amplitudes": self.positive_amplitudes}

    @classmethod
    def from_dict(cls, d: dict) -> "ConstraintBox":
        return cls(float(d["eta"]), float(d["M"]), bool(d["positive_amplitudes"]))


@dataclass
class FeasibilityReport:
    """Per-constraint slacks; the point is feasible iff every slack is >= 0."""

    feasible: bool
    w_norm_slack: np.ndarray  # ||w_i|| - eta, per unit
    amplitude_slack: np.ndarray  # a_i - eta or |a_i| - eta, per unit
    norm_slack: float  # M - ||theta||


def check_constraints(theta: MlpParams, box: ConstraintBox) -> FeasibilityReport:
    w_slack = np.array([np.linalg.norm(u.w) - box.eta for u in theta.units])
    amps = np.array([u.a for u in theta.units])
    if box.positive_amplitudes:
        a_slack = amps - box.eta
    else:
        a_slack = np.abs(amps) - box.eta
    n_slack = box.M - np.linalg.norm(theta.flatten())
    feasible = bool(np.all(w_slack >= 0) and np.all(a_slack >= 0) and n_slack >= 0)
    return FeasibilityReport(feasible, w_slack, a_slack, float(n_slack))


class ProjectionError(ValueError):
    """Raised when the two-stage projection cannot reach a feasible point."""


# nudge keeps pushed-out norms >= eta despite floating point rounding
_PUSH = 1.0 + 4e-15


def _apply_lower_bounds(vec: np.ndarray, k: int, d: int, box: ConstraintBox) -> None:
    amps = vec[1 : 1 + k]
    if box.positive_amplitudes:
        np.clip(amps, box.eta, None, out=amps)
    else:
        small = np.abs(amps) < box.eta
        # zero amplitudes push to +eta (deterministic tie-break)
        amps[small] = np.where(amps[small] >= 0, box.eta, -box.eta)
    W = vec[1 + k :].reshape(k, d + 1)
    norms = np.linalg.norm(W, axis=1)
    for i in range(k):
        if norms[i] < box.eta:
            if norms[i] == 0.0:
                W[i] = 0.0
                W[i, 0] = box.eta  # degenerate direction: first coordinate axis
            else:
                W[i] *= box.eta / norms[i] * _PUSH


def feasible_vector(vec: np.ndarray, k: int, d: int, box: ConstraintBox) -> bool:
    """Constraint check on a flattened parameter vector."""
    amps = vec[1 : 1 + k]
    a_ok = np.all(amps >= box.eta) if box.positive_amplitudes else np.all(np.abs(amps) >= box.eta)
    if not a_ok:
        return False
    W = vec[1 + k :].reshape(k, d + 1)
    if np.any(np.linalg.norm(W, axis=1) < box.eta):
        return False
    return bool(np.linalg.norm(vec) <= box.M)


def project_vector(vec: np.ndarray, k: int, d: int, box: ConstraintBox) -> np.ndarray:
    """Flattened-vector form of project_to_box (the optimizer's hot path)."""
    if feasible_vector(vec, k, d, box):
        return vec
    out = vec.copy()
    _apply_lower_bounds(out, k, d, box)
    nrm = np.linalg.norm(out)
    if nrm > box.M:
        out *= box.M / nrm
        _apply_lower_bounds(out, k, d, box)
    if feasible_vector(out, k, d, box):
        return out
    # the re-applied lower bounds overshot M; each push-out adds at most
    # eta^2 to the squared norm, so a norm target of sqrt(M^2 - 2k eta^2)
    # leaves room for all of them
    slack2 = box.M**2 - 2 * k * box.eta**2
    if slack2 > 0:
        out = vec.copy()
        _apply_lower_bounds(out, k, d, box)
        out *= np.sqrt(slack2) / np.linalg.norm(out)
        _apply_lower_bounds(out, k, d, box)
        if feasible_vector(out, k, d, box):
            return out
    raise ProjectionError(
        f"projection failed: eta={box.eta} and M={box.M} are mutually "
        f"inconsistent for k={k}, d={d}"
    )


def project_to_box(theta: MlpParams, box: ConstraintBox) -> MlpParams:
    """Project a parameter vector onto the feasible set.

    Stage one pushes each w_i radially out to norm eta and clamps the
    amplitudes; stage two rescales the whole flattened vector to norm M
    if needed and re-applies the per-unit lower bounds once. Feasible
    inputs are returned unchanged.
    """
    if check_constraints(theta, box).feasible:
        return theta
    k, d = theta.k, theta.input_dim
    return MlpParams.unflatten(project_vector(theta.flatten(), k, d, box), k, d)


# ---------------------------------------------------------------------------
# True model and data
# ---------------------------------------------------------------------------

INPUT_LAWS = ("standard_normal", "laplace")


@dataclass
class RegressionSpec:
    """True model: parameters theta0, known noise variance and input law."""

    theta0: MlpParams
    sigma2: float
    input_dim: int
    input_law: str = "standard_normal"

    def __post_init__(self):
        if self.theta0.input_dim != self.input_dim:
            raise ValueError(
                f"theta0 expects input_dim={self.theta0.input_dim}, spec says {self.input_dim}"
            )
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.input_law not in INPUT_LAWS:
            raise ValueError(f"unknown input law {self.input_law!r}; choose from {INPUT_LAWS}")

    @property
    def k0(self) -> int:
        return self.theta0.k

    def to_dict(self) -> dict:
        return {
            "theta0": self.theta0.to_dict(),
            "sigma2": self.sigma2,
            "input_dim": self.input_dim,
            "input_law": self.input_law,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionSpec":
        return cls(
            MlpParams.from_dict(d["theta0"]),
            float(d["sigma2"]),
            int(d["input_dim"]),
            str(d.get("input_law", "standard_normal")),
        )


def draw_inputs(spec: RegressionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.input_law == "standard_normal":
        return rng.standard_normal((n, spec.input_dim))
    # unit-variance Laplace: positive density on all of R^d, finite sixth moment
    return rng.laplace(scale=1.0 / np.sqrt(2.0), size=(n, spec.input_dim))


@dataclass
class Dataset:
    """Observed pairs (x_i, y_i) with the known noise variance attached."""

    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)
    sigma2: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"inconsistent shapes: x {self.x.shape}, y {self.y.shape}")
        if self.n < 1:
            raise ValueError("a dataset needs at least one row")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(self.d)] + ["y"])
            for xi, yi in zip(self.x, self.y):
                writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])

    @classmethod
    def from_csv(cls, path, sigma2: float) -> "Dataset":
        with open(path) as fh:
            text = "".join(line for line in fh if not line.startswith("#"))
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[-1] != "y" or header[0] != "x1":
            raise ValueError(f"unexpected dataset header: {header}")
        data = np.array([[float(v) for v in row] for row in body])
        return cls(data[:, :-1], data[:, -1], sigma2)


def generate_dataset(
    spec: RegressionSpec,
    n: int,
    seed: int,
    noise_sigma2: float | None = None,
) -> Dataset:
    """Draw n i.i.d. pairs from the true model, deterministically in seed.

    noise_sigma2 overrides the variance of the drawn noise only (the
    dataset still carries spec.sigma2 for likelihood evaluation); the
    default is spec.sigma2 itself.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    X = draw_inputs(spec, n, rng)
    s2 = spec.sigma2 if noise_sigma2 is None else noise_sigma2
    y = mlp_forward_batch(spec.theta0, X) + np.sqrt(s2) * rng.standard_normal(n)
    return Dataset(X, y, spec.sigma2)
