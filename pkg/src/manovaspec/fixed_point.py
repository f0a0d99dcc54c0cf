"""Coupled fixed-point system for the deterministic equivalent spectrum.

At a spectral argument z the system couples k trait-side weights a_r, k
sample-side weights b_r, and the Stieltjes value m0:

    a_r = -n_r^{-1} Tr[(z Id + sum_s b_s S_s)^{-1} S_r]        (trait side)
    b_r = -n_r^{-1} Tr_r[(Id + F diag_n(a))^{-1} F]            (sample side)
    m0  = -p^{-1}  Tr[(z Id + sum_s b_s S_s)^{-1}]

with S_r the noise covariances and F the block interaction matrix.  The
sample-side block traces are evaluated in a reduced n x n form: writing
F = V^T B V with V = [sqrt(n_1) U_1 | ... | sqrt(n_k) U_k], push-through
gives

    Tr_r[(Id + F diag_n(a))^{-1} F] = Tr[(Id_n + sum_s a_s M_s)^{-1} M_r]

with M_s = n_s (B U_s) U_s^T, which is what the iteration actually solves
(n is usually much smaller than n_+ = sum n_r).

The solver is a hybrid: a short undamped alternating (Picard) probe that
handles easy arguments in a few sweeps, then a line-searched Newton
iteration on the 2k unknowns (a, b).  Plain damped Picard is not viable
close to the support at small imaginary offsets: the Picard multiplier
there is a near-unit-modulus rotation, so its convergence degrades
without bound, while the Newton Jacobian traces come almost for free
from the inverses the sweep computes anyway.  Off the spectral support
the solution is real and the iteration runs in real arithmetic, with a
complex fallback just above the axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InconsistencyError, NonConvergenceError, SingularSystemError

__all__ = [
    "SpectralProblem",
    "FixedPointState",
    "ContinuationTrack",
    "build_problem",
    "solve_at",
    "solve_real_point",
    "continue_real_axis",
    "derivative_b",
    "residual",
]

MAX_ITER = 10_000
BASE_TOL = 1e-12
REAL_IMAG_CUTOFF = 1e-10
COMPLEX_FALLBACK_HEIGHT = 1e-12
_PICARD_PROBE = 8          # undamped sweeps before switching to Newton
_LINE_SEARCH = (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125)


@dataclass(frozen=True)
class SpectralProblem:
    """Precomputed operators for the fixed-point equations of one design."""

    n: int
    p: int
    n_r: tuple
    m_blocks: tuple            # k reduced sample-side matrices M_s (n x n)
    tr_sigma: np.ndarray       # Tr S_r
    b_infinity: np.ndarray     # -n_r^{-1} Tr F_rr, the large-z limit of b
    noise_diag: np.ndarray | None   # (k, p) when every S_r is diagonal
    noise_dense: tuple | None       # k dense (p, p) otherwise
    scale: float               # magnitude proxy for tolerances and bounds
    sample_eigs: np.ndarray | None = None  # (k, n) joint spectra of the M_s, when they commute

    @property
    def k(self):
        return len(self.n_r)

    def noise_matrix(self, b, z):
        """z Id + sum_s b_s S_s as a dense matrix (dense-noise path only)."""
        dt = np.result_type(np.asarray(b), complex(z).real if complex(z).imag == 0 else complex)
        M = np.zeros((self.p, self.p), dtype=dt)
        for b_s, S in zip(b, self.noise_dense):
            M += b_s * S
        M[np.diag_indices_from(M)] += z
        return M


def build_problem(design, noise):
    """Bundle a design and a noise model into solver-ready operators."""
    if noise.k != design.k:
        raise ConfigError(f"noise has {noise.k} components, design has {design.k}")
    if noise.p != design.p:
        raise ConfigError(f"noise dimension {noise.p} != design trait dimension {design.p}")
    m_blocks = []
    b_inf = np.zeros(design.k)
    for r, (nr, U) in enumerate(zip(design.n_r, design.U_r)):
        BU = design.B @ U
        m_blocks.append(np.ascontiguousarray(nr * (BU @ U.T)))
        b_inf[r] = -np.trace(U.T @ BU)  # = -n_r^{-1} Tr F_rr
    diag_ok = all(
        np.count_nonzero(S - np.diag(np.diagonal(S))) == 0 for S in noise.sigma_ring
    )
    noise_diag = (
        np.vstack([np.diagonal(S).copy() for S in noise.sigma_ring]) if diag_ok else None
    )
    noise_dense = None if diag_ok else tuple(noise.sigma_ring)
    # deterministic operator bound on the no-signal estimator norm:
    # ||W|| <= ||F|| sum_r ||G_r||^2 ||S_r|| with ||G_r|| ~ 1 + sqrt(p/n_r)
    f_norm = np.linalg.norm(design.B, 2) * sum(
        nr * np.linalg.norm(U, 2) ** 2 for nr, U in zip(design.n_r, design.U_r)
    )
    stack_norm = sum(
        (1.0 + np.sqrt(design.p / nr)) ** 2 * np.linalg.norm(S, 2)
        for nr, S in zip(design.n_r, noise.sigma_ring)
    )
    scale = max(1.0, f_norm * stack_norm)
    return SpectralProblem(
        n=design.n,
        p=design.p,
        n_r=tuple(design.n_r),
        m_blocks=tuple(m_blocks),
        tr_sigma=noise.traces,
        b_infinity=b_inf,
        noise_diag=noise_diag,
        noise_dense=noise_dense,
        scale=float(scale),
        sample_eigs=_joint_spectra(m_blocks),
    )


def _joint_spectra(m_blocks):
    """Joint eigenvalues of the reduced sample-side matrices, if available.

    Classification-style designs (one-way layouts, identity incidence)
    produce M_s that are symmetric and pairwise commuting; a shared
    eigenbasis then turns every sample-side update into an O(kn) sum.
    Returns None when the family lacks that structure (dense path).
    """
    n = m_blocks[0].shape[0]
    norms = [max(np.linalg.norm(M, 2), 1e-300) for M in m_blocks]
    for M, nm in zip(m_blocks, norms):
        if np.max(np.abs(M - M.T)) > 1e-10 * nm:
            return None
    for i, Mi in enumerate(m_blocks):
        for Mj in m_blocks[i + 1:]:
            if np.max(np.abs(Mi @ Mj - Mj @ Mi)) > 1e-9 * norms[i] * max(norms):
                return None
    # sequential block refinement: diagonalize M_1, then each later matrix
    # inside the eigenvalue clusters accumulated so far
    V = np.eye(n)
    blocks = [(0, n)]
    for M, nm in zip(m_blocks, norms):
        new_blocks = []
        for lo, hi in blocks:
            sub = V[:, lo:hi].T @ M @ V[:, lo:hi]
            w, Q = np.linalg.eigh((sub + sub.T) / 2.0)
            V[:, lo:hi] = V[:, lo:hi] @ Q
            start = lo
            for j in range(1, hi - lo):
                if w[j] - w[j - 1] > 1e-8 * nm:
                    new_blocks.append((start, lo + j))
                    start = lo + j
            new_blocks.append((start, hi))
        blocks = new_blocks
    eigs = np.vstack([np.einsum("ij,jk,ki->i", V.T, M, V) for M in m_blocks])
    # verify: the basis must diagonalize every block to roundoff
    for M, ev, nm in zip(m_blocks, eigs, norms):
        resid = np.max(np.abs(V.T @ M @ V - np.diag(ev)))
        if resid > 1e-8 * nm:
            return None
    return eigs


@dataclass(frozen=True)
class FixedPointState:
    """Converged values (a, b, m0) at one spectral argument."""

    z: complex
    a: np.ndarray
    b: np.ndarray
    m0: complex
    iterations: int
    residual: float


# ---------------------------------------------------------------------------
# equation right-hand sides and their small Jacobians


def _eval_a(b, z, problem, jac=False):
    """Trait-side rhs; optionally d(rhs_a)/d(b) as a k x k matrix."""
    n_r = np.asarray(problem.n_r)
    if problem.noise_diag is not None:
        d = z + b @ problem.noise_diag
        if np.any(d == 0):
            raise SingularSystemError(z)
        inv = 1.0 / d
        a = -(problem.noise_diag @ inv) / n_r
        m0 = -np.sum(inv) / problem.p
        if not jac:
            return a, m0, None
        w = problem.noise_diag * inv  # (k, p): S_s / d
        dA = (w @ (problem.noise_diag * inv).T) / n_r[:, None]
        # dA[r, s] = n_r^{-1} sum_j S_r S_s / d^2
        return a, m0, dA
    M = problem.noise_matrix(b, z)
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(z) from exc
    a = np.array([
        -np.einsum("ij,ji->", Minv, S) / nr for S, nr in zip(problem.noise_dense, n_r)
    ])
    m0 = -np.trace(Minv) / problem.p
    if not jac:
        return a, m0, None
    W = [Minv @ S for S in problem.noise_dense]
    dA = np.empty((problem.k, problem.k), dtype=a.dtype)
    for r in range(problem.k):
        for s in range(problem.k):
            dA[r, s] = np.einsum("ij,ji->", W[s], W[r]) / n_r[r]
    return a, m0, dA


def _eval_b(a, z, problem, jac=False):
    """Sample-side rhs via the reduced n x n system; optionally d(rhs_b)/d(a)."""
    n_r_arr = np.asarray(problem.n_r, dtype=float)
    if problem.sample_eigs is not None:
        denom = 1.0 + a @ problem.sample_eigs
        if np.any(denom == 0):
            raise SingularSystemError(z)
        inv = 1.0 / denom
        b = -(problem.sample_eigs @ inv) / n_r_arr
        if not np.all(np.isfinite(b)):
            raise SingularSystemError(z)
        if not jac:
            return b, None
        w = problem.sample_eigs * inv
        dB = (w @ w.T) / n_r_arr[:, None]
        return b, dB
    A = np.eye(problem.n, dtype=np.result_type(np.asarray(a), float))
    for a_s, M_s in zip(a, problem.m_blocks):
        A += a_s * M_s
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(z) from exc
    if not np.all(np.isfinite(Ainv)):
        raise SingularSystemError(z)
    n_r = problem.n_r
    b = np.array([
        -np.einsum("ij,ji->", Ainv, M_r) / nr for M_r, nr in zip(problem.m_blocks, n_r)
    ])
    if not jac:
        return b, None
    Y = [Ainv @ M_s for M_s in problem.m_blocks]
    dB = np.empty((problem.k, problem.k), dtype=b.dtype)
    for r in range(problem.k):
        for s in range(problem.k):
            dB[r, s] = np.einsum("ij,ji->", Y[s], Y[r]) / n_r[r]
    return b, dB


def residual(a, b, z, problem):
    """Max violation of the two coupled equations, evaluated from scratch."""
    a_rhs, _, _ = _eval_a(b, z, problem)
    b_rhs, _ = _eval_b(a, z, problem)
    return float(max(np.max(np.abs(a - a_rhs)), np.max(np.abs(b - b_rhs))))


def _cold_start(z, problem):
    """Large-z linearization: a_r ~ -Tr S_r / (n_r z), b_r ~ -n_r^{-1} Tr F_rr."""
    a = -problem.tr_sigma / (np.asarray(problem.n_r) * z)
    b = problem.b_infinity.astype(np.result_type(a))
    return a, b


def _tolerance(z, tol):
    if tol is not None:
        return tol
    return BASE_TOL * max(1.0, 1.0 / max(abs(z), 1e-300))


def solve_at(z, problem, init=None, tol=None, max_iter=MAX_ITER):
    """Solve the coupled system at one spectral argument.

    For Im z > 0 any initialization converges to the unique solution; at
    real z an off-support warm start (continuation) is expected.  Raises
    NonConvergenceError with the last residual when the iteration stalls,
    and SingularSystemError when a linear system degenerates (which
    signals an argument inside or near the support).
    """
    z = complex(z)
    real_mode = z.imag == 0.0
    z_work = z.real if real_mode else z
    tol = _tolerance(z, tol)

    if init is None:
        a, b = _cold_start(z_work, problem)
    else:
        a = np.asarray(init[0], dtype=complex).reshape(problem.k).copy()
        b = np.asarray(init[1], dtype=complex).reshape(problem.k).copy()
        if real_mode and max(np.max(np.abs(a.imag)), np.max(np.abs(b.imag))) < REAL_IMAG_CUTOFF:
            a, b = a.real.copy(), b.real.copy()
        elif real_mode:
            real_mode = False
            z_work = z
    if real_mode:
        a, b = np.real(a).astype(float), np.real(b).astype(float)
    elif z.imag > 0:
        # keep warm starts in the closed upper half plane; the alternating
        # sweep maps it to itself, so only Newton steps can leave
        a = a.real + 1j * np.clip(a.imag, 0.0, None)
        b = b.real + 1j * np.clip(b.imag, 0.0, None)

    try:
        try:
            return _solve_hybrid(z, z_work, a, b, problem, tol, max_iter)
        except InconsistencyError:
            # converged onto the mirror branch below the axis: restart cold
            # with a half-plane-preserving damped prefix
            a, b = _cold_start(z_work, problem)
            return _solve_hybrid(z, z_work, a, b, problem, tol, max_iter,
                                 picard_prefix=300)
    except (NonConvergenceError, SingularSystemError):
        if real_mode:
            return _complex_fallback(z, problem, (a, b), tol, max_iter)
        raise


def _solve_hybrid(z, z_work, a, b, problem, tol, max_iter, picard_prefix=0):
    it = 0
    r_prev = np.inf
    upper = complex(z).imag > 0

    # optional damped prefix (branch recovery): theta = 1/2 sweeps stay in
    # the closed upper half plane and walk into the physical basin
    while it < picard_prefix:
        it += 1
        a_rhs, _, _ = _eval_a(b, z_work, problem)
        a = 0.5 * (a + a_rhs)
        b_rhs, _ = _eval_b(a, z_work, problem)
        b = 0.5 * (b + b_rhs)

    # phase 1: undamped alternating sweeps; cheap, and sufficient away
    # from the support where the map contracts strongly
    while it < min(picard_prefix + _PICARD_PROBE, max_iter):
        it += 1
        a_rhs, m0, _ = _eval_a(b, z_work, problem)
        r_a = float(np.max(np.abs(a - a_rhs)))
        a = a_rhs
        b_rhs, _ = _eval_b(a, z_work, problem)
        r_b = float(np.max(np.abs(b - b_rhs)))
        b = b_rhs
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NonConvergenceError(z, float("inf"), it)
        r = max(r_a, r_b)
        if r <= tol:
            st = _finish(z, z_work, a, b, problem, it, tol)
            if st is not None:
                return st
        if r > 0.3 * r_prev:
            break  # slow contraction: hand over to Newton
        r_prev = r

    # phase 2: Newton on (a, b) with a backtracking line search; the
    # Picard sweep is kept as a fallback step when no Newton trial helps
    k = problem.k
    eye2k = np.eye(2 * k)
    while it < max_iter:
        it += 1
        a_rhs, m0, dA = _eval_a(b, z_work, problem, jac=True)
        b_rhs, dB = _eval_b(a, z_work, problem, jac=True)
        R = np.concatenate([a - a_rhs, b - b_rhs])
        r = float(np.max(np.abs(R)))
        if r <= tol:
            return _make_state(z, z_work, a, b, problem, it, r)
        J = eye2k.astype(R.dtype).copy()
        J[:k, k:] = -dA
        J[k:, :k] = -dB
        try:
            delta = np.linalg.solve(J, -R)
        except np.linalg.LinAlgError:
            delta = None
        step_taken = False
        if delta is not None and np.all(np.isfinite(delta)):
            for t in _LINE_SEARCH:
                a_t = a + t * delta[:k]
                b_t = b + t * delta[k:]
                if upper:
                    # block clear jumps onto the mirror branch below the axis
                    dip = min(float(np.min(np.imag(a_t))), float(np.min(np.imag(b_t))))
                    if dip < -1e-3 * (1.0 + float(np.max(np.abs(b_t)))):
                        continue
                try:
                    r_t = residual(a_t, b_t, z_work, problem)
                except SingularSystemError:
                    continue
                it += 1
                if r_t < r:
                    a, b, step_taken = a_t, b_t, True
                    break
        if not step_taken:
            # damped Picard fallback; preserves the physical half plane
            theta = 0.5
            a = (1.0 - theta) * a + theta * a_rhs
            b_half, _ = _eval_b(a, z_work, problem)
            b = (1.0 - theta) * b + theta * b_half
            it += 1
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise NonConvergenceError(z, float("inf"), it)

    raise NonConvergenceError(z, residual(a, b, z_work, problem), max_iter)


def _finish(z, z_work, a, b, problem, it, tol):
    """Accept a candidate after an independent residual re-evaluation."""
    res = residual(a, b, z_work, problem)
    if res > tol:
        return None
    return _make_state(z, z_work, a, b, problem, it, res)


def _make_state(z, z_work, a, b, problem, it, res):
    """Project a converged iterate onto the closed upper half plane.

    Near support edges the Newton system is ill-conditioned, so a
    residual at tolerance only pins the tiny imaginary parts to roughly
    sqrt(tolerance); genuine violations beyond that accuracy still raise.
    """
    a = a.astype(complex)
    b = b.astype(complex)
    if complex(z).imag > 0:
        slack = 1e-6 * (1.0 + float(np.max(np.abs(b))))
        worst = min(float(np.min(a.imag)), float(np.min(b.imag)))
        if worst < -slack:
            raise InconsistencyError(
                f"solution left the closed upper half plane at z={z!r}: "
                f"min Im component = {worst:.3e}"
            )
        if worst < 0.0:
            a = a.real + 1j * np.clip(a.imag, 0.0, None)
            b = b.real + 1j * np.clip(b.imag, 0.0, None)
    _, m0, _ = _eval_a(b, z_work, problem)
    state = FixedPointState(z=z, a=a, b=b, m0=complex(m0), iterations=it, residual=res)
    _check_state(state)
    return state


def _complex_fallback(z, problem, init, tol, max_iter):
    """Retry a stalled real-axis solve just above the axis, then project."""
    z_off = complex(z).real + 1j * COMPLEX_FALLBACK_HEIGHT
    state = solve_at(z_off, problem, init=init, tol=tol, max_iter=max_iter)
    a, b = state.a.real, state.b.real
    res = residual(a, b, complex(z).real, problem)
    if res > max(10.0 * tol, 1e-10):
        raise NonConvergenceError(z, res, state.iterations)
    _, m0, _ = _eval_a(b, complex(z).real, problem)
    return FixedPointState(
        z=complex(z), a=a.astype(complex), b=b.astype(complex), m0=complex(m0),
        iterations=state.iterations, residual=res,
    )


def _check_state(state):
    """Half-plane constraints from the defining theorem, up to roundoff."""
    if state.z.imag > 0:
        if state.m0.imag <= 0:
            raise InconsistencyError(
                f"Im m0 = {state.m0.imag:.3e} <= 0 at z={state.z!r} in the upper half plane"
            )


def solve_real_point(lam, problem, tol=None, warm_start_height=1.0, path_steps=20):
    """Solve at a single real off-support point without an existing track.

    Path-follows from lam + i*warm_start_height down to the axis in at
    most `path_steps` geometric height reductions, warm-starting each
    solve from the previous one.
    """
    lam = float(lam)
    heights = np.geomspace(warm_start_height, 1e-9, path_steps)
    state = solve_at(lam + 1j * heights[0], problem, tol=tol)
    for h in heights[1:]:
        state = solve_at(lam + 1j * h, problem, init=(state.a, state.b), tol=tol)
    return solve_at(lam, problem, init=(state.a.real, state.b.real), tol=tol)


@dataclass
class ContinuationTrack:
    """Converged states along an ascending real grid (possibly at z = lam + i*eps).

    States are stored in ascending-grid order; entries may be None when the
    caller asked for per-point error marking.  `lipschitz` records the
    largest observed ||Delta b|| / Delta lambda as a continuity witness.
    """

    grid: np.ndarray
    states: list
    epsilon: float
    lipschitz: float
    derivatives: dict = field(default_factory=dict)

    def state_at(self, lam):
        """Nearest converged state to lam (for warm starts)."""
        best, best_d = None, np.inf
        for g, s in zip(self.grid, self.states):
            if s is None:
                continue
            d = abs(g - lam)
            if d < best_d:
                best, best_d = s, d
        if best is None:
            raise NonConvergenceError(lam, float("inf"), 0, "track holds no converged states")
        return best


def continue_real_axis(grid, problem, warm_start_height=1.0, epsilon=0.0,
                       tol=None, on_error="raise"):
    """Path-follow the fixed point along a monotone real grid.

    The first point is reached by lowering the imaginary part from
    `warm_start_height` geometrically; each later point is initialized by
    linear extrapolation from the previous two converged states.  With
    `epsilon > 0` every solve sits at lam + i*epsilon (the density mode);
    with `epsilon = 0` solves are on the real axis and must be
    off-support.  `on_error="mark"` records failed points as None instead
    of raising.  Descending grids walk the path right-to-left; the track
    itself is stored in ascending order.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigError("continuation grid must be a non-empty 1-d array")
    reversed_input = False
    if grid.size > 1:
        diffs = np.diff(grid)
        if np.all(diffs < 0):
            reversed_input = True
        elif not np.all(diffs > 0):
            raise ConfigError("continuation grid must be strictly monotone")

    def _solve(zr, init):
        zz = zr + 1j * epsilon if epsilon > 0 else zr
        return solve_at(zz, problem, init=init, tol=tol)

    states = []
    lipschitz = 0.0
    last = second_last = None  # most recent converged states, walk order

    # first point: descend from the warm-start height
    try:
        heights = np.geomspace(warm_start_height, max(epsilon, 1e-9), 20)
        st = solve_at(grid[0] + 1j * heights[0], problem, tol=tol)
        for h in heights[1:]:
            st = solve_at(grid[0] + 1j * h, problem, init=(st.a, st.b), tol=tol)
        st = _solve(grid[0], (st.a, st.b))
        states.append(st)
        last = st
    except (NonConvergenceError, SingularSystemError):
        if on_error == "raise":
            raise
        states.append(None)

    for i in range(1, grid.size):
        lam = grid[i]
        if last is not None and second_last is not None:
            dz = (lam - last.z.real) / (last.z.real - second_last.z.real)
            init = (
                last.a + dz * (last.a - second_last.a),
                last.b + dz * (last.b - second_last.b),
            )
        elif last is not None:
            init = (last.a, last.b)
        else:
            init = None
        try:
            if init is None:
                st = solve_real_point(lam, problem, tol=tol) if epsilon == 0 else _solve(lam, None)
            else:
                st = _solve(lam, init)
            if last is not None:
                step = abs(lam - last.z.real)
                if step > 0:
                    lipschitz = max(lipschitz, float(np.max(np.abs(st.b - last.b))) / step)
            states.append(st)
            second_last, last = last, st
        except (NonConvergenceError, SingularSystemError) as exc:
            if on_error == "raise":
                raise NonConvergenceError(
                    lam, getattr(exc, "residual", float("nan")),
                    getattr(exc, "iterations", 0),
                    f"continuation failed at grid point {lam}: {exc}",
                ) from exc
            states.append(None)

    if reversed_input:
        states = states[::-1]
        grid = grid[::-1]
    return ContinuationTrack(
        grid=np.ascontiguousarray(grid), states=states, epsilon=float(epsilon),
        lipschitz=float(lipschitz),
    )


def derivative_b(track, lam, problem, h=None, tol=None):
    """Central finite difference of the sample-side weights at off-support lam.

    Fresh real-axis solves at lam +/- h are warm-started from the track;
    results are cached on the track.  Each component must come out
    >= -1e-8 (off-support monotonicity), else the state is inconsistent.
    """
    lam = float(lam)
    key = (lam, h)
    if key in track.derivatives:
        return track.derivatives[key]
    step = h if h is not None else 1e-4 * max(1.0, abs(lam))
    base = track.state_at(lam)
    init = (base.a.real, base.b.real)
    plus = solve_at(lam + step, problem, init=init, tol=tol)
    minus = solve_at(lam - step, problem, init=init, tol=tol)
    db = (plus.b.real - minus.b.real) / (2.0 * step)
    if np.min(db) < -1e-8:
        raise InconsistencyError(
            f"b' = {db} has a negative component at lam={lam}; "
            "off-support weights must be nondecreasing"
        )
    track.derivatives[key] = db
    return db
