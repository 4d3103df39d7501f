"""Stability tests for linear loop dynamics ``theta' = A (theta - theta*)``."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import NumericalError, as_square, as_vector
from .model import LinearSystem

#: Spectra with ``|max Re(lambda)|`` at or below this are reported as marginal.
MARGINAL_TOL = 1e-8
#: Relative eigenvalue floor for the positive-definiteness test on X.
PD_RTOL = 1e-10


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    eigenvalues: np.ndarray
    margin: float
    status: str  # "stable", "marginal" or "unstable"

    def rows(self):
        """CSV rows ``(index, re, im, margin, stable)``, one per eigenvalue."""
        return [
            (k, float(lam.real), float(lam.imag), self.margin, int(self.stable))
            for k, lam in enumerate(self.eigenvalues)
        ]


VERDICT_COLUMNS = ("index", "re", "im", "margin", "stable")


@dataclass(frozen=True)
class LyapunovCertificate:
    """Solution of ``A^T X + X A = -Q``; only trust ``X`` when ``valid``."""

    X: Optional[np.ndarray]
    Q: np.ndarray
    residual: float
    valid: bool
    reason: str = ""


def _sorted_spectrum(eigs):
    # deterministic order: by real part, then imaginary part
    order = np.lexsort((eigs.imag, eigs.real))
    return eigs[order]


def eigen_stability(A):
    """Classify ``theta' = A theta`` from the spectrum of ``A``.

    Stable means every eigenvalue has real part below ``-MARGINAL_TOL``.
    A spectrum whose rightmost eigenvalue sits within ``MARGINAL_TOL`` of the
    imaginary axis is ``"marginal"`` and never counted as stable.
    """
    A = as_square(A, "A")
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}") from exc
    eigs = _sorted_spectrum(eigs.astype(complex))
    margin = float(np.max(eigs.real))
    if margin < -MARGINAL_TOL:
        status = "stable"
    elif margin <= MARGINAL_TOL:
        status = "marginal"
    else:
        status = "unstable"
    return StabilityVerdict(status == "stable", eigs, margin, status)


def standalone_check(A):
    """Per-loop stand-alone stability: loop i alone is stable iff ``A[i, i] < 0``."""
    A = as_square(A, "A")
    return np.diag(A) < 0


def lyapunov_operator(A):
    """Matrix of ``X -> A^T X + X A`` acting on row-major ``vec(X)``."""
    n = A.shape[0]
    eye = np.eye(n)
    return np.kron(A.T, eye) + np.kron(eye, A.T)


def lyapunov_solve(A, Q=None):
    """Solve ``A^T X + X A = -Q`` through the dense Kronecker system.

    The certificate is valid when the solution is symmetric and positive
    definite (eigenvalues above ``PD_RTOL * trace(X) / I``). A singular
    operator (some ``lambda_i + lambda_j`` on the imaginary axis) gives
    ``reason="marginal"``; a non positive definite solution gives
    ``reason="unstable"``.
    """
    A = as_square(A, "A")
    n = A.shape[0]
    Q = np.eye(n) if Q is None else as_square(Q, "Q")
    if Q.shape != A.shape:
        raise ValueError("Q and A must have the same shape")
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ValueError("Q must be symmetric")
    if np.linalg.eigvalsh(Q).min() <= 0:
        raise ValueError("Q must be positive definite")

    eigs = np.linalg.eigvals(A)
    pair_sums = np.abs(eigs[:, None] + eigs[None, :])
    scale = max(1.0, float(np.abs(eigs).max()))
    if pair_sums.min() <= MARGINAL_TOL * scale:
        return LyapunovCertificate(None, Q, np.inf, False, "marginal")

    L = lyapunov_operator(A)
    X = np.linalg.solve(L, -Q.reshape(-1)).reshape(n, n)
    X = 0.5 * (X + X.T)
    residual = float(np.linalg.norm(A.T @ X + X @ A + Q))
    tr = float(np.trace(X))
    if tr <= 0 or np.linalg.eigvalsh(X).min() <= PD_RTOL * tr / n:
        return LyapunovCertificate(X, Q, residual, False, "unstable")
    return LyapunovCertificate(X, Q, residual, True)


def lyapunov_value(X, theta, theta_star):
    """Quadratic form ``(theta - theta*)^T X (theta - theta*)``."""
    X = as_square(X, "X")
    d = as_vector(theta, "theta", X.shape[0]) - as_vector(theta_star, "theta_star", X.shape[0])
    return float(d @ X @ d)


# Pade coefficients and thresholds for scaling and squaring (Higham, 2005).
_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0),
    13: (64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
         960960.0, 16380.0, 182.0, 1.0),
}
_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1, 7: 9.504178996162932e-1,
          9: 2.097847961257068e0, 13: 5.371920351148152e0}


def _pade_uv(A, m):
    c = _PADE[m]
    n = A.shape[0]
    eye = np.eye(n)
    A2 = A @ A
    if m != 13:
        powers = [eye, A2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ A2)
        U = A @ sum(c[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        V = sum(c[2 * k] * powers[k] for k in range(m // 2 + 1))
        return U, V
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (c[13] * A6 + c[11] * A4 + c[9] * A2)
             + c[7] * A6 + c[5] * A4 + c[3] * A2 + c[1] * eye)
    V = (A6 @ (c[12] * A6 + c[10] * A4 + c[8] * A2)
         + c[6] * A6 + c[4] * A4 + c[2] * A2 + c[0] * eye)
    return U, V


def expm(A):
    """Matrix exponential by scaling and squaring with a diagonal Pade approximant."""
    A = as_square(A, "A")
    norm1 = np.linalg.norm(A, 1)
    s = 0
    for m in (3, 5, 7, 9):
        if norm1 <= _THETA[m]:
            break
    else:
        m = 13
        if norm1 > _THETA[13]:
            s = int(np.ceil(np.log2(norm1 / _THETA[13])))
    As = A / 2.0 ** s
    U, V = _pade_uv(As, m)
    with np.errstate(over="raise", invalid="raise"):
        try:
            R = np.linalg.solve(V - U, V + U)
            for _ in range(s):
                R = R @ R
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"matrix exponential overflowed (||A||_1={norm1:.3e})") from exc
    if not np.all(np.isfinite(R)):
        raise NumericalError(f"matrix exponential overflowed (||A||_1={norm1:.3e})")
    return R


def linear_solution(sys: LinearSystem, theta0, t):
    """Closed-form state ``theta* + exp(tA) (theta0 - theta*)`` at time ``t >= 0``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    theta0 = as_vector(theta0, "theta0", sys.dim)
    if t == 0:
        return theta0.copy()
    return sys.theta_star + expm(t * sys.A) @ (theta0 - sys.theta_star)


def instability_det_2x2(J):
    """Two-loop saddle test: ``det(J) < 0`` means eigenvalues of opposite sign."""
    J = np.asarray(J, dtype=float)
    if J.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {J.shape}")
    return bool(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0] < 0)
