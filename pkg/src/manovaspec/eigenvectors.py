"""Predicted eigenvector alignments at simple outlier roots.

At a simple root lam of det T the kernel direction u of T(lam) and the
normalizer

    alpha = u^T ( diag_l(b) Gamma M^{-1} (Id + b'.S) M^{-1} Gamma^T diag_l(b)
                  + diag_l(b') ) u,       M = lam Id + b.S,

predict the spike-space image of the sample eigenvector: Gamma v_hat is
approximately alpha^{-1/2} u (up to sign).  The resolvent derivative is
evaluated in the analytic chain-rule form above, so the only numerical
derivative involved is the low-dimensional b'.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InconsistencyError, MultiplicityError, SingularSystemError
from .fixed_point import derivative_b, solve_at
from .outliers import evaluate_T

__all__ = ["AlignmentPrediction", "kernel_vector", "compute_alpha", "predict_alignment"]

KERNEL_SINGULAR_MAX = 1e-6
KERNEL_GAP_MIN = 1e-3


@dataclass(frozen=True)
class AlignmentPrediction:
    """Kernel direction, normalizer, and predicted spike-space projection."""

    lam: float
    u: np.ndarray
    alpha: float
    predicted_projection: np.ndarray  # alpha^{-1/2} u, indexed like Gamma rows
    sign_convention: int              # pivot entry of u made positive
    row_index: tuple                  # (component, spike) per entry, 1-based
    separation_warning: bool = False

    def projection_for(self, component, spike):
        for i, rc in enumerate(self.row_index):
            if rc == (component, spike):
                return float(self.predicted_projection[i])
        raise KeyError(f"no spike row ({component}, {spike})")


def kernel_vector(tval):
    """Unit kernel direction of a near-singular outlier matrix.

    Requires a clearly one-dimensional kernel: smallest singular value
    below 1e-6 with the next one above 1e-3.  The sign is fixed so the
    largest-magnitude entry is positive.
    """
    svals = np.linalg.svd(tval.matrix, compute_uv=False)
    if svals.size == 0:
        raise MultiplicityError("empty outlier matrix has no kernel direction")
    smin = svals[-1]
    sgap = svals[-2] if svals.size > 1 else np.inf
    if smin > KERNEL_SINGULAR_MAX or sgap < KERNEL_GAP_MIN:
        raise MultiplicityError(
            f"kernel of T({tval.lam}) is not clearly simple: "
            f"singular values {smin:.3e} / {sgap:.3e}"
        )
    _, _, vt = np.linalg.svd(tval.matrix)
    u = vt[-1]
    pivot = int(np.argmax(np.abs(u)))
    if u[pivot] < 0:
        u = -u
    return u, pivot


def compute_alpha(lam, u, problem, signal, track, b=None, db=None, tol=None):
    """The positive normalizer at a simple root.

    b and b' may be supplied; otherwise they come from a warm-started
    solve and a central finite difference on the track.  A non-positive
    result signals a failed root or derivative and raises.
    """
    lam = float(lam)
    if b is None:
        near = track.state_at(lam)
        b = solve_at(lam, problem, init=(near.a.real, near.b.real), tol=tol).b.real
    if db is None:
        db = derivative_b(track, lam, problem, tol=tol)
    bl = np.repeat(b, signal.l_r)
    dbl = np.repeat(db, signal.l_r)
    G = signal.stacked
    w = G.T @ (bl * u)  # Gamma^T diag_l(b) u, trait space
    if problem.noise_diag is not None:
        d = lam + b @ problem.noise_diag
        if np.any(d == 0):
            raise SingularSystemError(lam)
        v = w / d
        middle = 1.0 + db @ problem.noise_diag
        quad = float(v @ (middle * v))
    else:
        M = problem.noise_matrix(b, lam)
        v = np.linalg.solve(M, w)
        Sv = np.zeros_like(v)
        for db_s, S in zip(db, problem.noise_dense):
            Sv += db_s * (S @ v)
        quad = float(v @ (v + Sv))
    alpha = quad + float(u @ (dbl * u))
    if alpha <= 0:
        raise InconsistencyError(
            f"alpha = {alpha:.3e} <= 0 at lam={lam}; root or derivative is inconsistent"
        )
    return alpha


def predict_alignment(root, problem, signal, track, other_roots=(), delta=0.1,
                      support=None, tol=None):
    """Assemble the alignment prediction for one simple root.

    A separation warning (rather than a refusal) is attached when another
    root or the support sits within delta; the limit theorem assumes
    separation and is silent about the marginal regime.
    """
    lam = float(getattr(root, "lam", root))
    tval = evaluate_T(lam, problem, signal, track=track, tol=tol)
    u, pivot = kernel_vector(tval)
    b = tval.state.b.real
    alpha = compute_alpha(lam, u, problem, signal, track, b=b, tol=tol)
    proj = u / np.sqrt(alpha)
    limit = np.linalg.norm(signal.stacked @ signal.stacked.T, 2) if signal.l_plus else 0.0
    if float(proj @ proj) > limit * (1.0 + 1e-6):
        raise InconsistencyError(
            f"predicted projection norm {float(proj @ proj):.6g} exceeds the top "
            f"signal eigenvalue {limit:.6g} at lam={lam}"
        )
    crowded = any(
        0.0 < abs(lam - float(getattr(o, "lam", o))) <= delta for o in other_roots
    )
    if support is not None and not support.is_outside(lam, delta):
        crowded = True
    return AlignmentPrediction(
        lam=lam,
        u=u,
        alpha=alpha,
        predicted_projection=proj,
        sign_convention=pivot,
        row_index=signal.row_index,
        separation_warning=crowded,
    )
