"""Partial-wave solution of a single homogeneous layer.

A trial wave u = p exp(i k (x1 + alpha x3) - i omega t) satisfies the Christoffel
system (Gamma(alpha) - rho c_p^2 I) p = 0 with Gamma_ik = C_ijkl n_j n_l and
n = (1, 0, alpha).  The quadratic eigenproblem in alpha is linearised into a 6x6
companion matrix on the state (p, alpha p), which keeps near-degenerate plies
well conditioned.

All quantities are SI (Pa, kg/m^3, m, rad/m).  Since alpha and p depend only on
c_p = omega / k, `partial_waves` works on arrays of phase velocities at once and
is what the dispersion sweep calls on its scan grids.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .materials import to_full

logger = logging.getLogger(__name__)

REAL_TOL = 1e-9
# relative; eig on the non-normal companion matrix splits an exact double alpha well above 1e-10
DEGENERACY_TOL = 1e-8

_EYE3 = np.eye(3)


class EigenSolveError(RuntimeError):
    def __init__(self, message, f=None, k=None):
        super().__init__(message)
        self.f = f
        self.k = k


def acoustic_tensor(t, n):
    """Gamma_ik = C_ijkl n_j n_l in Pa for a (possibly complex) direction n."""
    C = to_full(t.pascal)
    n = np.asarray(n)
    return np.einsum('ijkl,j,l->ik', C, n, n)


def stress_factor(t, n, p):
    """d_i = C_i3kl n_l p_k in Pa, i.e. the traction sigma_i3 divided by (i k)."""
    C = to_full(t.pascal)
    return np.einsum('ikl,l,k->i', C[:, 2, :, :], np.asarray(n), np.asarray(p))


def _orthonormalize_pairs(p, alphas, pairs):
    """Fix polarizations inside degenerate alpha pairs against the (0,1,0) / (1,0,0) frame."""
    for a, b in pairs:
        scale = np.maximum(1.0, np.abs(alphas[:, a]))
        mask = np.abs(alphas[:, a] - alphas[:, b]) <= DEGENERACY_TOL * scale
        if not mask.any():
            continue
        basis, _ = np.linalg.qr(np.stack([p[mask, :, a], p[mask, :, b]], axis=-1))
        coeff = basis[:, 1, :].conj()
        weak = np.linalg.norm(coeff, axis=1) < 0.1
        coeff[weak] = basis[weak, 0, :].conj()
        norm = np.linalg.norm(coeff, axis=1)[:, None]
        coeff = coeff / norm
        other = np.stack([-coeff[:, 1].conj(), coeff[:, 0].conj()], axis=1)
        p[mask, :, a] = np.einsum('mij,mj->mi', basis, coeff)
        p[mask, :, b] = np.einsum('mij,mj->mi', basis, other)


def partial_waves(stiffness_pa, density, c_p):
    """Solve the layer eigenproblem for every phase velocity in c_p.

    Parameters
    ----------
    stiffness_pa : (6, 6) array
        Contracted stiffness in Pa, already rotated into the propagation frame.
    density : float
        kg/m^3.
    c_p : array_like
        Phase velocities in m/s.

    Returns
    -------
    alphas : (K, 6) complex
        Sorted so that columns 0-2 are the waves decaying (or travelling) towards +x3
        and columns 3-5 those towards -x3.
    p : (K, 3, 6) complex
        Unit polarizations, largest component real positive.
    d : (K, 3, 6) complex
        Stress factors, Pa.
    """
    c_p = np.atleast_1d(np.asarray(c_p, dtype=float))
    C = to_full(np.asarray(stiffness_pa, dtype=float))
    scale = np.abs(stiffness_pa).max()
    Q = C[:, 0, :, 0] / scale
    R = C[:, 0, :, 2] / scale
    T = C[:, 2, :, 2] / scale
    T_inv = np.linalg.inv(T)
    rho_c2 = density * c_p ** 2 / scale

    K = c_p.size
    A = np.zeros((K, 6, 6))
    A[:, :3, 3:] = _EYE3
    A[:, 3:, :3] = -(T_inv @ Q)[None, :, :] + rho_c2[:, None, None] * T_inv[None, :, :]
    A[:, 3:, 3:] = -(T_inv @ (R + R.T))
    alphas, vecs = np.linalg.eig(A)
    if not np.all(np.isfinite(alphas)):
        raise np.linalg.LinAlgError("non-finite eigenvalues in layer companion matrix")

    size = np.abs(alphas)
    tol = REAL_TOL * (1.0 + size)
    im = alphas.imag
    category = np.where(im > tol, 0, np.where(im < -tol, 3, np.where(alphas.real > 0, 1, 2)))
    order = np.argsort(category * 1e6 + size, axis=1, kind='stable')
    alphas = np.take_along_axis(alphas, order, axis=1)
    p = np.take_along_axis(vecs[:, :3, :], order[:, None, :], axis=2)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)

    _orthonormalize_pairs(p, alphas, ((0, 1), (1, 2), (3, 4), (4, 5)))

    lead = np.take_along_axis(p, np.abs(p).argmax(axis=1)[:, None, :], axis=1)
    p = p * (lead.conj() / np.abs(lead))

    n = np.zeros((K, 6, 3), dtype=complex)
    n[:, :, 0] = 1.0
    n[:, :, 2] = alphas
    d = np.einsum('ikl,Kjl,Kkj->Kij', C[:, 2, :, :], n, p)
    return alphas, p, d


@dataclass(frozen=True, eq=False)
class LayerSolution:
    """Six partial waves of one layer at (f, k).

    G stacks polarizations (rows u1, u2, u3) over stress factors (rows sigma13*,
    sigma23*, sigma33*); column j belongs to partial wave j.  H holds the phase
    terms across the layer thickness: exp(i k alpha h) for the three +x3 waves and
    exp(-i k alpha h) for the -x3 waves, which are referenced to the upper face so
    that every entry stays bounded by one.
    """
    alphas: np.ndarray
    polarizations: np.ndarray
    stress_factors: np.ndarray
    G: np.ndarray
    H: np.ndarray
    f: float
    k: float
    h: float
    density: float
    stiffness_pa: np.ndarray

    @property
    def phase_velocity(self):
        return 2 * np.pi * self.f / self.k

    def residuals(self):
        """Relative Christoffel residual of every (alpha, p) pair."""
        C = to_full(self.stiffness_pa)
        rho_c2 = self.density * self.phase_velocity ** 2
        out = np.empty(6)
        for j in range(6):
            n = np.array([1.0, 0.0, self.alphas[j]])
            gamma = np.einsum('ijkl,j,l->ik', C, n, n)
            out[j] = (np.linalg.norm((gamma - rho_c2 * _EYE3) @ self.polarizations[:, j])
                      / np.linalg.norm(gamma))
        return out


def layer_phase_terms(alphas, k, h):
    """Bounded phase factors across a layer of thickness h (m); see LayerSolution."""
    sign = np.array([1, 1, 1, -1, -1, -1])
    return np.exp(1j * np.multiply.outer(np.atleast_1d(k), sign) * alphas * h)


def solve_layer(t, density, f, k, h):
    """Partial waves of one layer (ElasticityTensor t, SI inputs) at frequency f and wavenumber k."""
    if not (f > 0 and k > 0 and h > 0):
        raise ValueError(f"solve_layer needs f, k, h > 0 (got f={f}, k={k}, h={h})")
    c_p = 2 * np.pi * f / k
    try:
        alphas, p, d = partial_waves(t.pascal, density, [c_p])
    except np.linalg.LinAlgError as e:
        raise EigenSolveError(f"Layer eigen-solve failed at f={f:.6g} Hz, k={k:.6g} rad/m: {e}", f, k)
    alphas, p, d = alphas[0], p[0], d[0]
    G = np.vstack([p, d])
    H = layer_phase_terms(alphas, k, h)[0]
    return LayerSolution(alphas, p, d, G, H, f, k, h, density, t.pascal)
