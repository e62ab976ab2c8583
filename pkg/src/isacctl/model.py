"""Problem-instance data model, configuration ingestion, and random primitives.

A scenario is a linear Gauss-Markov source ``x' = A x + B a + w`` regulated over
a finite horizon through a base station that either senses (``u = 0``) or
communicates (``u = 1``) in each slot, each succeeding independently with
probability ``lambda_s`` / ``lambda_c``.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ._linalg import EIG_TOL, min_eig

FIELDS = ("A", "B", "C", "W", "V", "m0", "M0", "lambda_s", "lambda_c", "N",
          "omega_x", "omega_a")
REQUIRED = ("A", "B", "C", "W", "V", "lambda_s", "lambda_c", "N", "omega_x",
            "omega_a")
SYM_TOL = 1e-10


class ModeAction(enum.IntEnum):
    SENSE = 0
    COMMUNICATE = 1


class ScenarioError(ValueError):
    """Invalid scenario; ``field`` names the offending entry when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ScenarioParseError(ScenarioError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W: np.ndarray
    V: np.ndarray
    m0: np.ndarray
    M0: np.ndarray
    lambda_s: float
    lambda_c: float
    N: int
    omega_x: np.ndarray  # (N+2, n, n)
    omega_a: np.ndarray  # (N+1, m, m)

    def __post_init__(self):
        for name in ("A", "B", "C", "W", "V", "m0", "M0", "omega_x", "omega_a"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "lambda_s", float(self.lambda_s))
        object.__setattr__(self, "lambda_c", float(self.lambda_c))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def is_scalar(self):
        return self.A.shape == (1, 1)

    def link_probability(self, u):
        return self.lambda_c if int(u) == ModeAction.COMMUNICATE else self.lambda_s

    def replace(self, **changes) -> ScenarioConfig:
        """Return a validated copy with some document-level fields replaced.

        Weight sequences are rebuilt from the new ``N`` when only ``N`` changes
        and the weights were constant.
        """
        doc = to_document(self)
        if "N" in changes:
            for key in ("omega_x", "omega_a"):
                if key not in changes and np.ndim(doc[key]) == 3:
                    raise ScenarioError(
                        f"cannot change N with a time-varying {key}", key)
        doc.update(changes)
        return scenario_from_dict(doc)


@dataclass
class ValidationReport:
    errors: list[ScenarioError] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors

    def raise_for_errors(self):
        if self.errors:
            first = self.errors[0]
            msg = "; ".join(str(e) for e in self.errors)
            raise ScenarioError(msg, first.field)


# -- ingestion ---------------------------------------------------------------

def _as_matrix(value, name):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{name}: not a numeric matrix ({exc})", name)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ScenarioParseError(
            f"{name}: expected a scalar or a row-major nested 2-D array", name)
    return arr


def _as_vector(value, name):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{name}: not a numeric vector ({exc})", name)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ScenarioParseError(f"{name}: expected a scalar or a flat array", name)
    return arr


def _as_weights(value, name, length, dim):
    """Expand a weight entry into a (length, dim, dim) stack.

    A single matrix (or scalar) is repeated over the whole horizon.  A list of
    matrices must have exactly ``length`` entries; for ``dim == 1`` a flat list
    of scalars is also read as a sequence.
    """
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{name}: not numeric ({exc})", name)
    if arr.ndim == 1 and dim == 1:
        arr = arr.reshape(-1, 1, 1)
    if arr.ndim <= 2:
        mat = _as_matrix(arr, name)
        return np.broadcast_to(mat, (length,) + mat.shape).copy()
    if arr.ndim != 3:
        raise ScenarioParseError(f"{name}: too many nesting levels", name)
    if arr.shape[0] != length:
        raise ScenarioError(
            f"{name}: sequence has {arr.shape[0]} entries, expected {length}", name)
    return arr


def scenario_from_dict(doc: dict[str, Any]) -> ScenarioConfig:
    """Build and validate a scenario from a decoded configuration mapping."""
    if not isinstance(doc, dict):
        raise ScenarioParseError("configuration must be a key-value mapping")
    unknown = sorted(set(doc) - set(FIELDS))
    if unknown:
        raise ScenarioError(f"unknown field {unknown[0]!r}", unknown[0])
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise ScenarioError(f"missing required field {missing[0]!r}", missing[0])

    A = _as_matrix(doc["A"], "A")
    B = _as_matrix(doc["B"], "B")
    C = _as_matrix(doc["C"], "C")
    W = _as_matrix(doc["W"], "W")
    V = _as_matrix(doc["V"], "V")
    n, m = A.shape[0], B.shape[1]
    m0 = _as_vector(doc["m0"], "m0") if "m0" in doc else np.zeros(n)
    M0 = _as_matrix(doc["M0"], "M0") if "M0" in doc else np.eye(n)

    N = doc["N"]
    if isinstance(N, bool) or not isinstance(N, (int, float)) or N != int(N) or N < 0:
        raise ScenarioError(f"N must be a nonnegative integer, got {N!r}", "N")
    N = int(N)
    for key in ("lambda_s", "lambda_c"):
        if isinstance(doc[key], bool) or not isinstance(doc[key], (int, float)):
            raise ScenarioParseError(f"{key} must be a number", key)

    cfg = ScenarioConfig(
        A=A, B=B, C=C, W=W, V=V, m0=m0, M0=M0,
        lambda_s=doc["lambda_s"], lambda_c=doc["lambda_c"], N=N,
        omega_x=_as_weights(doc["omega_x"], "omega_x", N + 2, n),
        omega_a=_as_weights(doc["omega_a"], "omega_a", N + 1, m),
    )
    validate(cfg).raise_for_errors()
    return cfg


def load_scenario(text: str) -> ScenarioConfig:
    """Parse a JSON scenario document and validate it."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"malformed scenario document: {exc}") from exc
    return scenario_from_dict(doc)


def load_scenario_file(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return load_scenario(fh.read())


def _plain(arr):
    arr = np.asarray(arr)
    if arr.shape == (1, 1) or arr.shape == (1,):
        return float(arr.reshape(()))
    return arr.tolist()


def _plain_weights(stack):
    if np.all(stack == stack[0]):
        return _plain(stack[0])
    return stack.tolist()


def to_document(cfg: ScenarioConfig) -> dict[str, Any]:
    """Canonical JSON-compatible mapping; scalars collapse 1x1 entries."""
    return {
        "A": _plain(cfg.A), "B": _plain(cfg.B), "C": _plain(cfg.C),
        "W": _plain(cfg.W), "V": _plain(cfg.V),
        "m0": _plain(cfg.m0), "M0": _plain(cfg.M0),
        "lambda_s": cfg.lambda_s, "lambda_c": cfg.lambda_c, "N": cfg.N,
        "omega_x": _plain_weights(cfg.omega_x),
        "omega_a": _plain_weights(cfg.omega_a),
    }


def serialize(cfg: ScenarioConfig) -> str:
    return json.dumps(to_document(cfg), sort_keys=True, indent=2) + "\n"


def scenario_digest(cfg: ScenarioConfig) -> str:
    """SHA-256 over the canonical compact serialization."""
    text = json.dumps(to_document(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def benchmark_scenario(N=50, lambda_s=0.8, lambda_c=0.85, M0=1.0) -> ScenarioConfig:
    """Scalar benchmark: A=0.9, B=1, C=1, W=0.3, V=0.1, unit weights."""
    return scenario_from_dict({
        "A": 0.9, "B": 1.0, "C": 1.0, "W": 0.3, "V": 0.1,
        "omega_x": 1.0, "omega_a": 1.0, "N": N,
        "lambda_s": lambda_s, "lambda_c": lambda_c, "M0": M0,
    })


# -- validation --------------------------------------------------------------

def _check_symmetric(X, name, errors, field=None):
    field = field or name
    scale = max(1.0, float(np.max(np.abs(X)))) if X.size else 1.0
    if X.shape[0] != X.shape[1]:
        errors.append(ScenarioError(f"{name} must be square, got {X.shape}", field))
        return False
    if np.max(np.abs(X - X.T), initial=0.0) > SYM_TOL * scale:
        errors.append(ScenarioError(f"{name} must be symmetric", field))
        return False
    return True


def validate(cfg: ScenarioConfig) -> ValidationReport:
    """Check every scenario invariant and collect errors plus soft warnings."""
    rep = ValidationReport()
    err = rep.errors
    arrays = {k: getattr(cfg, k) for k in
              ("A", "B", "C", "W", "V", "m0", "M0", "omega_x", "omega_a")}
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            err.append(ScenarioError(f"{name} has non-finite entries", name))
    if err:
        return rep

    A, B, C = cfg.A, cfg.B, cfg.C
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        err.append(ScenarioError(f"A must be square, got {A.shape}", "A"))
        return rep
    n = A.shape[0]
    if B.ndim != 2 or B.shape[0] != n:
        err.append(ScenarioError(f"B must have {n} rows, got {B.shape}", "B"))
    if C.ndim != 2 or C.shape[1] != n:
        err.append(ScenarioError(f"C must have {n} columns, got {C.shape}", "C"))
    if err:
        return rep
    m, p = B.shape[1], C.shape[0]

    expected = {"W": (n, n), "V": (p, p), "M0": (n, n), "m0": (n,),
                "omega_x": (cfg.N + 2, n, n), "omega_a": (cfg.N + 1, m, m)}
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            err.append(ScenarioError(
                f"{name} has shape {arrays[name].shape}, expected {shape}", name))
    if err:
        return rep

    for name in ("W", "V", "M0"):
        X = arrays[name]
        if _check_symmetric(X, name, err) and min_eig(X) <= EIG_TOL:
            err.append(ScenarioError(f"{name} must be positive definite", name))
    for k, X in enumerate(cfg.omega_x):
        label = f"omega_x[{k}]"
        if _check_symmetric(X, label, err, "omega_x") and min_eig(X) < -EIG_TOL:
            err.append(ScenarioError(f"{label} must be positive semidefinite", "omega_x"))
    for k, X in enumerate(cfg.omega_a):
        label = f"omega_a[{k}]"
        if _check_symmetric(X, label, err, "omega_a") and min_eig(X) <= EIG_TOL:
            err.append(ScenarioError(f"{label} must be positive definite", "omega_a"))

    for name in ("lambda_s", "lambda_c"):
        lam = getattr(cfg, name)
        if not (np.isfinite(lam) and 0.0 <= lam <= 1.0):
            err.append(ScenarioError(f"{name} must lie in [0, 1], got {lam}", name))
    if cfg.N < 0:
        err.append(ScenarioError("N must be nonnegative", "N"))

    if not err and cfg.lambda_c < cfg.lambda_s:
        rep.warnings.append(
            "assumption lambda_c >= lambda_s violated: threshold structure is "
            "not guaranteed, the DP is still solvable")
    return rep


# -- random primitives -------------------------------------------------------

def make_stream(seed: int) -> np.random.Generator:
    """Random stream from an explicit 64-bit seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def episode_stream(base_seed: int, index: int) -> np.random.Generator:
    """Independent stream for episode ``index``.

    Splitting rule: ``SeedSequence(base_seed, spawn_key=(index,))``, identical
    to the ``index``-th child of ``SeedSequence(base_seed).spawn``.
    """
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return np.random.default_rng(ss)


def noise_factor(X):
    """Lower Cholesky factor used to colour standard normal draws."""
    return np.linalg.cholesky(np.asarray(X, dtype=float))


def sample_disturbances(cfg: ScenarioConfig, stream: np.random.Generator):
    """Draw ``w ~ N(0, W)`` and ``v ~ N(0, V)``."""
    w = noise_factor(cfg.W) @ stream.standard_normal(cfg.n)
    v = noise_factor(cfg.V) @ stream.standard_normal(cfg.p)
    return w, v


def sample_link(u, cfg: ScenarioConfig, stream: np.random.Generator) -> int:
    """Success indicator (0/1) of a sense or communicate attempt."""
    return int(stream.random() < cfg.link_probability(u))
