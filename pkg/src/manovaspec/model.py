"""Mixed-model designs, noise/signal models, and derived interaction matrices.

The data model mirrors the estimator Sigma_hat = Y^T B Y for the linear
mixed model Y = X beta + U_1 alpha_1 + ... + U_k alpha_k, where each
random-effect covariance splits into a low-rank signal part Gamma_r^T Gamma_r
plus a full-rank noise part.  Everything here is deterministic; randomness
only enters through the Monte Carlo module.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError

__all__ = [
    "ModelDesign",
    "NoiseModel",
    "SignalModel",
    "InteractionMatrix",
    "ValidationReport",
    "build_one_way_layout",
    "compute_interaction_matrix",
    "validate_manova",
    "isotropic_approximation",
    "sample_paper_noise",
]

_SYM_TOL = 1e-12
_BX_TOL = 1e-12
_U_NORM_WARN = 100.0


def _as_matrix(m, name):
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ConfigError(f"{name} must be a 2-d array, got shape {a.shape}")
    return a


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ModelDesign:
    """Deterministic skeleton of the mixed model.

    n samples, p traits, k random-effect components of sizes n_r, with
    incidence matrices U_r (n x n_r) and a symmetric estimator kernel B
    (n x n).  An optional fixed-effect design X is accepted purely so the
    annihilation condition B X = 0 can be checked; beta is never estimated.
    """

    n: int
    p: int
    n_r: tuple
    U_r: tuple
    B: np.ndarray
    X: np.ndarray | None = None
    # validation pipelines set this False so a violating X can be ingested
    # and reported instead of rejected at construction
    enforce_annihilation: bool = True

    def __post_init__(self):
        if self.n <= 0 or self.p <= 0:
            raise ConfigError(f"dimensions must be positive: n={self.n}, p={self.p}")
        if len(self.n_r) != len(self.U_r) or len(self.n_r) == 0:
            raise ConfigError("need one incidence matrix per component")
        object.__setattr__(
            self, "U_r", tuple(_as_matrix(U, f"U_{r+1}") for r, U in enumerate(self.U_r))
        )
        for r, (nr, U) in enumerate(zip(self.n_r, self.U_r), start=1):
            if nr <= 0:
                raise ConfigError(f"n_{r} must be positive, got {nr}")
            if U.shape != (self.n, nr):
                raise ConfigError(f"U_{r} has shape {U.shape}, expected {(self.n, nr)}")
            norm = np.linalg.norm(U, 2)
            if norm > _U_NORM_WARN:
                warnings.warn(
                    f"incidence matrix U_{r} has operator norm {norm:.3g} > {_U_NORM_WARN:g}; "
                    "the asymptotic theory assumes bounded incidence norms",
                    stacklevel=3,
                )
        B = _as_matrix(self.B, "B")
        if B.shape != (self.n, self.n):
            raise ConfigError(f"B has shape {B.shape}, expected {(self.n, self.n)}")
        asym = np.max(np.abs(B - B.T)) if B.size else 0.0
        scale = max(np.max(np.abs(B)), 1.0) if B.size else 1.0
        if asym > _SYM_TOL * scale:
            warnings.warn(
                f"estimator kernel B symmetrized on ingestion (max asymmetry {asym:.3e})",
                stacklevel=3,
            )
        object.__setattr__(self, "B", _freeze((B + B.T) / 2.0))
        object.__setattr__(self, "U_r", tuple(_freeze(U) for U in self.U_r))
        object.__setattr__(self, "n_r", tuple(int(v) for v in self.n_r))
        if self.X is not None:
            X = _as_matrix(self.X, "X")
            if X.shape[0] != self.n:
                raise ConfigError(f"X has {X.shape[0]} rows, expected {self.n}")
            res = self.bx_residual(X)
            bound = _BX_TOL * max(np.max(np.abs(self.B)), 1e-300) * max(np.max(np.abs(X)), 1e-300)
            if res > bound and self.enforce_annihilation:
                raise ConfigError(
                    f"B does not annihilate X: max|BX| = {res:.3e} (the estimator requires BX=0)"
                )
            object.__setattr__(self, "X", _freeze(X))

    @property
    def k(self):
        return len(self.n_r)

    def bx_residual(self, X=None):
        """max|B X| for the stored (or a supplied) fixed-effect design."""
        X = self.X if X is None else np.asarray(X, dtype=float)
        if X is None:
            return 0.0
        return float(np.max(np.abs(self.B @ X))) if X.size else 0.0

    @classmethod
    def create(cls, U_r, B, p, X=None, enforce_annihilation=True):
        """Build a design from raw arrays, inferring n and n_r."""
        U_r = tuple(_as_matrix(U, f"U_{i+1}") for i, U in enumerate(U_r))
        B = _as_matrix(B, "B")
        n = B.shape[0]
        return cls(
            n=n, p=int(p), n_r=tuple(U.shape[1] for U in U_r), U_r=U_r, B=B, X=X,
            enforce_annihilation=enforce_annihilation,
        )


@dataclass(frozen=True)
class NoiseModel:
    """The k noise covariances (symmetric PSD p x p, rank-deficiency allowed)."""

    sigma_ring: tuple

    def __post_init__(self):
        mats = []
        p = None
        for r, S in enumerate(self.sigma_ring, start=1):
            S = _as_matrix(S, f"sigma_ring_{r}")
            if S.shape[0] != S.shape[1]:
                raise ConfigError(f"noise covariance {r} is not square: {S.shape}")
            if p is None:
                p = S.shape[0]
            elif S.shape[0] != p:
                raise ConfigError("noise covariances must share the trait dimension")
            scale = max(np.max(np.abs(S)), 1e-300)
            if np.max(np.abs(S - S.T)) > _SYM_TOL * scale:
                raise ConfigError(f"noise covariance {r} is not symmetric to 1e-12")
            S = (S + S.T) / 2.0
            lo = float(np.linalg.eigvalsh(S)[0]) if S.size else 0.0
            if lo < -1e-10 * np.linalg.norm(S, 2):
                raise ConfigError(
                    f"noise covariance {r} has eigenvalue {lo:.3e} below the PSD roundoff floor"
                )
            mats.append(_freeze(S))
        object.__setattr__(self, "sigma_ring", tuple(mats))

    @property
    def k(self):
        return len(self.sigma_ring)

    @property
    def p(self):
        return self.sigma_ring[0].shape[0]

    @property
    def traces(self):
        return np.array([np.trace(S) for S in self.sigma_ring])

    @cached_property
    def sqrts(self):
        """Symmetric square roots, negative eigenvalues clamped to zero.

        Computed once per model; the simulator draws noise rows as
        standard normals times these factors.
        """
        out = []
        for S in self.sigma_ring:
            if np.count_nonzero(S - np.diag(np.diagonal(S))) == 0:
                out.append(_freeze(np.diag(np.sqrt(np.clip(np.diagonal(S), 0.0, None)))))
                continue
            w, V = np.linalg.eigh(S)
            w = np.clip(w, 0.0, None)
            out.append(_freeze((V * np.sqrt(w)) @ V.T))
        return tuple(out)

    @cached_property
    def sqrt_diagonals(self):
        """(k, p) square-root diagonals when every covariance is diagonal, else None."""
        if any(np.count_nonzero(S - np.diag(np.diagonal(S))) for S in self.sigma_ring):
            return None
        return _freeze(np.vstack([
            np.sqrt(np.clip(np.diagonal(S), 0.0, None)) for S in self.sigma_ring
        ]))


@dataclass(frozen=True)
class SignalModel:
    """Spike matrices Gamma_r (l_r x p) and their vertical stack."""

    gamma_r: tuple
    p: int

    def __post_init__(self):
        mats = []
        for r, G in enumerate(self.gamma_r, start=1):
            G = np.asarray(G, dtype=float)
            if G.size == 0:
                G = G.reshape(0, self.p)
            if G.ndim != 2 or G.shape[1] != self.p:
                raise ConfigError(f"signal block {r} has shape {G.shape}, expected (*, {self.p})")
            mats.append(_freeze(G))
        object.__setattr__(self, "gamma_r", tuple(mats))
        if self.l_plus > self.p / 10:
            warnings.warn(
                f"total spike count {self.l_plus} exceeds p/10; the low-rank signal "
                "assumption is strained",
                stacklevel=3,
            )

    @property
    def k(self):
        return len(self.gamma_r)

    @property
    def l_r(self):
        return tuple(G.shape[0] for G in self.gamma_r)

    @property
    def l_plus(self):
        return sum(self.l_r)

    @cached_property
    def stacked(self):
        """The l_+ x p stack of all spike rows, component blocks in order."""
        if self.l_plus == 0:
            return _freeze(np.zeros((0, self.p)))
        return _freeze(np.vstack([G for G in self.gamma_r if G.shape[0] > 0]))

    @property
    def row_index(self):
        """(component, row-within-component) pair for each stacked row, 1-based."""
        return tuple(
            (r + 1, j + 1) for r, G in enumerate(self.gamma_r) for j in range(G.shape[0])
        )

    @property
    def spike_strengths(self):
        """Squared row norms, the mu values of the stacked spikes."""
        G = self.stacked
        return np.sum(G * G, axis=1)

    @classmethod
    def empty(cls, k, p):
        return cls(gamma_r=tuple(np.zeros((0, p)) for _ in range(k)), p=p)

    @classmethod
    def from_spikes(cls, k, p, spikes):
        """Assemble from (component, vector) pairs; components are 1-based."""
        rows = [[] for _ in range(k)]
        for r, vec in spikes:
            if not 1 <= r <= k:
                raise ConfigError(f"spike component {r} outside 1..{k}")
            v = np.asarray(vec, dtype=float).reshape(-1)
            if v.shape[0] != p:
                raise ConfigError(f"spike vector has length {v.shape[0]}, expected {p}")
            rows[r - 1].append(v)
        gamma = tuple(
            np.vstack(rs) if rs else np.zeros((0, p)) for rs in rows
        )
        return cls(gamma_r=gamma, p=p)


@dataclass(frozen=True)
class InteractionMatrix:
    """Block matrix with (r,s) block sqrt(n_r n_s) U_r^T B U_s, symmetrized."""

    F: np.ndarray
    n_r: tuple

    @property
    def offsets(self):
        return tuple(np.concatenate([[0], np.cumsum(self.n_r)]).tolist())

    def block(self, r, s):
        """The (r,s) block, components 1-based."""
        o = self.offsets
        return self.F[o[r - 1]:o[r], o[s - 1]:o[s]]

    def block_trace(self, r):
        """Trace of the (r,r) diagonal block."""
        o = self.offsets
        return float(np.trace(self.F[o[r - 1]:o[r], o[r - 1]:o[r]]))


@dataclass(frozen=True)
class ValidationReport:
    """Per-component moment conditions n_r^{-1} Tr F_rr against the target."""

    target: int
    values: np.ndarray
    passed_per_component: np.ndarray
    bx_residual: float | None
    tol: float = 1e-10

    @property
    def passed(self):
        ok = bool(np.all(self.passed_per_component))
        if self.bx_residual is not None:
            ok = ok and self.bx_residual <= self.tol
        return ok


def build_one_way_layout(n_pairs, p, group_size=2):
    """Balanced one-way classification design with a residual component.

    n = group_size * n_pairs samples in n_pairs disjoint groups; U_1 holds
    the 0/1 group indicators, U_2 is the identity.  The kernel is
    B = (pi - pi_perp/(group_size-1)) / n with pi the projection onto
    col-span(U_1), which makes Y^T B Y unbiased for the within-group
    component (for pairs this is the familiar (pi - pi_perp)/n).
    """
    n_pairs, p, group_size = int(n_pairs), int(p), int(group_size)
    if n_pairs < 2 or p < 1 or group_size < 2:
        raise ConfigError(
            f"need n_pairs >= 2, p >= 1, group_size >= 2; got {n_pairs}, {p}, {group_size}"
        )
    n = group_size * n_pairs
    U1 = np.zeros((n, n_pairs))
    for g in range(n_pairs):
        U1[g * group_size:(g + 1) * group_size, g] = 1.0
    pi = U1 @ U1.T / group_size
    pi_perp = np.eye(n) - pi
    B = (pi - pi_perp / (group_size - 1)) / n
    return ModelDesign(
        n=n, p=p, n_r=(n_pairs, n), U_r=(U1, np.eye(n)), B=B
    )


def compute_interaction_matrix(design):
    """Assemble the full n_+ x n_+ interaction matrix from the design."""
    k = design.k
    n_plus = sum(design.n_r)
    F = np.zeros((n_plus, n_plus))
    offs = np.concatenate([[0], np.cumsum(design.n_r)])
    BU = [design.B @ U for U in design.U_r]
    for r in range(k):
        for s in range(k):
            blk = np.sqrt(design.n_r[r] * design.n_r[s]) * (design.U_r[r].T @ BU[s])
            F[offs[r]:offs[r + 1], offs[s]:offs[s + 1]] = blk
    F = (F + F.T) / 2.0
    return InteractionMatrix(F=_freeze(F), n_r=design.n_r)


def validate_manova(design, target):
    """Check the unbiasedness conditions n_r^{-1} Tr F_rr = 1{r = target}.

    Returns a report rather than raising: scaled or mis-specified kernels
    show up as failed components, and the fixed-effect annihilation
    residual is carried along when X is present.
    """
    if not 1 <= target <= design.k:
        raise ConfigError(f"target component {target} outside 1..{design.k}")
    values = np.array([
        float(np.trace(design.U_r[r].T @ design.B @ design.U_r[r]))
        for r in range(design.k)
    ])
    want = np.array([1.0 if r + 1 == target else 0.0 for r in range(design.k)])
    tol = 1e-10
    passed = np.abs(values - want) <= tol
    bx = design.bx_residual() if design.X is not None else None
    return ValidationReport(
        target=target, values=values, passed_per_component=passed, bx_residual=bx, tol=tol
    )


def isotropic_approximation(noise, p=None):
    """Replace each noise covariance by (Tr/p) times the identity."""
    p = noise.p if p is None else int(p)
    return NoiseModel(
        sigma_ring=tuple((np.trace(S) / p) * np.eye(p) for S in noise.sigma_ring)
    )


def sample_paper_noise(p, zeroed_leading, seed):
    """Diagonal noise component: leading entries zero, the rest iid Exponential(1).

    Deterministic given the seed; returns a single p x p covariance to be
    assembled into a NoiseModel by the caller.
    """
    p = int(p)
    zeroed_leading = int(zeroed_leading)
    if not 0 <= zeroed_leading < p:
        raise ConfigError(f"zeroed_leading must lie in [0, p); got {zeroed_leading} for p={p}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(17,)))
    d = rng.exponential(1.0, size=p)
    d[:zeroed_leading] = 0.0
    return np.diag(d)
