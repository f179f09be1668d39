"""Continuous-variable (Fock-space) circuit simulator with analytic gradients.

Modes are truncated to ``cutoff`` levels; an M-mode state is a complex vector
of shape ``(batch, cutoff**M)``.  Gates are matrix exponentials of the
*truncated* generators (hence exactly unitary on the truncated space), built
by an in-house scaling-and-squaring Taylor ``expm``:

* ``squeeze(r, phi)``   = expm(r/2 (e^{-i phi} a^2 - e^{i phi} a_dag^2))
* ``displace(r, phi)``  = expm(r (e^{i phi} a_dag - e^{-i phi} a))
* ``rotation(phi)``     = diag(e^{i phi n})
* ``kerr(kappa)``       = diag(e^{i kappa n^2})
* ``beamsplitter(t,p)`` = expm(t (e^{i p} a_dag b - e^{-i p} a b_dag))

Parameter tangents use exact operator identities (amplitude derivatives are
``H @ U`` with ``H`` the unit generator; phase derivatives are commutators
with the number operator), so no Frechet machinery is needed at runtime.

The policy circuit: per-mode squeezed vacuum, a displacement encoding of the
observation along the momentum quadrature (phase pi/2), then layers of
[interferometer, squeezers, interferometer, displacements, Kerr].  Readout is
the renormalized momentum expectation ``<P_j> / <1>`` on the first
``n_actions`` modes.  Gradients come from a Wirtinger-calculus adjoint walk.

The initial state uses the analytic squeezed-vacuum amplitudes truncated to
the cutoff, so its norm is slightly below one; circuits track that deficiency
and warn (``TruncationWarning``) when it exceeds the configured tolerance.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "TruncationError", "TruncationWarning", "CVPolicyConfig",
    "expm_taylor", "ladder", "number_op",
    "squeeze_mat", "displace_mat", "rotation_mat", "kerr_mat",
    "beamsplitter_mat", "clements_pairs", "prepare_squeezed",
    "init_cv_policy_params", "n_cv_policy_params", "prepare_displacements",
    "simulate_cv", "cv_expectation_p", "cv_policy_logits",
]


class TruncationError(ValueError):
    """A prepared state lost more norm to the cutoff than allowed."""


class TruncationWarning(UserWarning):
    """A circuit state's norm deficiency exceeded the configured tolerance."""


# ----------------------------------------------------------------------
# operators and matrix exponential


def ladder(cutoff: int) -> np.ndarray:
    """Truncated annihilation operator."""
    return np.diag(np.sqrt(np.arange(1.0, cutoff)), 1).astype(complex)


def number_op(cutoff: int) -> np.ndarray:
    return np.diag(np.arange(cutoff)).astype(complex)


def momentum_op(cutoff: int) -> np.ndarray:
    """P = i (a_dag - a) / sqrt(2); Hermitian."""
    a = ladder(cutoff)
    return 1j * (a.conj().T - a) / np.sqrt(2.0)


def expm_taylor(A: np.ndarray) -> np.ndarray:
    """Matrix exponential: scale by 2^-s to norm <= 1/2, Taylor, square back."""
    A = np.asarray(A, dtype=complex)
    nrm = np.linalg.norm(A, np.inf)
    s = 0 if nrm <= 0.5 else int(np.ceil(np.log2(nrm / 0.5)))
    B = A / (2.0 ** s)
    n = A.shape[0]
    out = np.eye(n, dtype=complex)
    term = np.eye(n, dtype=complex)
    for k in range(1, 64):
        term = term @ B / k
        out += term
        if np.linalg.norm(term, np.inf) <= 1e-18 * np.linalg.norm(out, np.inf):
            break
    for _ in range(s):
        out = out @ out
    return out


def _freeze(*arrays):
    for arr in arrays:
        arr.flags.writeable = False
    return arrays if len(arrays) > 1 else arrays[0]


# Each *_mat returns (U, dU/d(param1), dU/d(param2), ...).  Cached on exact
# float keys: within one rollout/update the trainables are constant, so every
# evaluation after the first is a dictionary hit.


@lru_cache(maxsize=512)
def squeeze_mat(r: float, phi: float, cutoff: int):
    a = ladder(cutoff)
    a2 = a @ a
    H = 0.5 * (np.exp(-1j * phi) * a2 - np.exp(1j * phi) * a2.conj().T)
    U = expm_taylor(r * H)
    N = np.arange(cutoff)
    dphi = 0.5j * (N[:, None] * U - U * N[None, :])
    return _freeze(U, H @ U, dphi)


@lru_cache(maxsize=512)
def displace_mat(r: float, phi: float, cutoff: int):
    a = ladder(cutoff)
    H = np.exp(1j * phi) * a.conj().T - np.exp(-1j * phi) * a
    U = expm_taylor(r * H)
    N = np.arange(cutoff)
    dphi = 1j * (N[:, None] * U - U * N[None, :])
    return _freeze(U, H @ U, dphi)


@lru_cache(maxsize=512)
def rotation_mat(phi: float, cutoff: int):
    n = np.arange(cutoff)
    U = np.diag(np.exp(1j * phi * n))
    return _freeze(U, np.diag(1j * n * np.exp(1j * phi * n)))


@lru_cache(maxsize=512)
def kerr_mat(kappa: float, cutoff: int):
    n2 = np.arange(cutoff) ** 2
    diag = np.exp(1j * kappa * n2)
    return _freeze(np.diag(diag), np.diag(1j * n2 * diag))


@lru_cache(maxsize=64)
def beamsplitter_mat(theta: float, phi: float, cutoff: int):
    """Two-mode gate on (cutoff^2, cutoff^2); first mode is the slow index."""
    a = ladder(cutoff)
    eye = np.eye(cutoff)
    A = np.kron(a, eye)
    B = np.kron(eye, a)
    H = np.exp(1j * phi) * A.conj().T @ B - np.exp(-1j * phi) * A @ B.conj().T
    U = expm_taylor(theta * H)
    Na = np.kron(number_op(cutoff), eye).diagonal().real
    dphi = 1j * (Na[:, None] * U - U * Na[None, :])
    return _freeze(U, H @ U, dphi)


@lru_cache(maxsize=16)
def _encode_eig(cutoff: int):
    """Eigendecomposition of Q = a + a_dag, for batched D(i r) = expm(i r Q)."""
    a = ladder(cutoff)
    lam, V = np.linalg.eigh((a + a.conj().T).real)
    return _freeze(lam, V)


def _encode_mats(rs: np.ndarray, cutoff: int, with_tangent: bool):
    """Per-sample momentum-displacement gates D(i r_b), shape (B, c, c)."""
    lam, V = _encode_eig(cutoff)
    phase = np.exp(1j * np.outer(rs, lam))          # (B, c)
    D = np.einsum("ij,bj,kj->bik", V, phase, V, optimize=True)
    if not with_tangent:
        return D, None
    dD = np.einsum("ij,bj,kj->bik", V, 1j * lam * phase, V, optimize=True)
    return D, dD


# ----------------------------------------------------------------------
# state preparation


def prepare_squeezed(r: float, phi: float, cutoff: int,
                     min_norm: float = 1.0 - 1e-6) -> np.ndarray:
    """Single-mode squeezed vacuum, analytic amplitudes truncated at cutoff.

    Raises :class:`TruncationError` if the kept squared norm falls below
    ``min_norm``; pass a smaller bound to accept lossier cutoffs.
    """
    amps = np.zeros(cutoff, dtype=complex)
    t = np.tanh(r)
    coef = 1.0
    fact = 1.0
    for n in range(0, (cutoff + 1) // 2):
        if 2 * n >= cutoff:
            break
        if n > 0:
            fact *= (2.0 * n) * (2.0 * n - 1.0)
        # sqrt((2n)!)/(2^n n!) * (-e^{i phi} tanh r)^n
        amps[2 * n] = (np.sqrt(fact) / (2.0 ** n * math.factorial(n))
                       * (-np.exp(1j * phi) * t) ** n)
    amps /= np.sqrt(np.cosh(r))
    kept = float(np.sum(np.abs(amps) ** 2))
    if kept < min_norm:
        raise TruncationError(
            f"squeezed state (r={r}, cutoff={cutoff}) keeps norm^2 {kept:.6f} "
            f"< required {min_norm}")
    return amps


# ----------------------------------------------------------------------
# policy circuit


@dataclass(frozen=True)
class CVPolicyConfig:
    n_modes: int
    n_layers: int
    n_actions: int
    cutoff: int
    init_squeeze_r: float = 0.5
    init_squeeze_phi: float = np.pi / 2
    disp_scale: float = 1.0
    obs_scaling: str = "centered"  # 'centered' (2z-1) | 'identity'
    trunc_tol: float = 1e-3

    def __post_init__(self):
        if self.n_actions > self.n_modes:
            raise ValueError(f"need n_actions <= n_modes, got "
                             f"{self.n_actions} > {self.n_modes}")
        if self.obs_scaling not in ("centered", "identity"):
            raise ValueError(f"unknown obs_scaling {self.obs_scaling!r}")

    @property
    def n_pairs(self) -> int:
        return self.n_modes * (self.n_modes - 1) // 2


def clements_pairs(n_modes: int) -> list[tuple[int, int]]:
    """Rectangular-mesh pairing: alternate (0,1)(2,3).. and (1,2)(3,4).. columns
    until n(n-1)/2 couplers are placed."""
    want = n_modes * (n_modes - 1) // 2
    pairs: list[tuple[int, int]] = []
    col = 0
    while len(pairs) < want:
        for i in range(col % 2, n_modes - 1, 2):
            pairs.append((i, i + 1))
            if len(pairs) == want:
                break
        col += 1
    return pairs


def n_cv_policy_params(cfg: CVPolicyConfig) -> int:
    """Per layer: 2 interferometers (2 angles per coupler) + per-mode
    squeeze(r,phi) + displacement(r,phi) + Kerr."""
    return cfg.n_layers * (4 * cfg.n_pairs + 5 * cfg.n_modes)


def init_cv_policy_params(cfg: CVPolicyConfig, rng: np.random.Generator,
                          prefix: str = "policy") -> dict[str, Tensor]:
    L, M, K = cfg.n_layers, cfg.n_modes, cfg.n_pairs
    def mk(name, arr):
        return ad.parameter(arr, name=f"{prefix}.{name}")
    params = {
        f"{prefix}.bs1": mk("bs1", rng.uniform(-np.pi, np.pi, size=(L, K, 2))),
        f"{prefix}.sq": mk("sq", np.stack(
            [rng.normal(0.0, 0.05, size=(L, M)),
             rng.uniform(-np.pi, np.pi, size=(L, M))], axis=-1)),
        f"{prefix}.bs2": mk("bs2", rng.uniform(-np.pi, np.pi, size=(L, K, 2))),
        f"{prefix}.disp": mk("disp", np.stack(
            [rng.normal(0.0, 0.1, size=(L, M)),
             rng.uniform(-np.pi, np.pi, size=(L, M))], axis=-1)),
        f"{prefix}.kerr": mk("kerr", rng.normal(0.0, 0.05, size=(L, M))),
    }
    return params


_PARAM_KEYS = ("bs1", "sq", "bs2", "disp", "kerr")


# -- gate application on (B, cutoff**M) states -------------------------


def _apply_1m(state, U, mode, M, c):
    B = state.shape[0]
    v = state.reshape(B, c ** mode, c, -1)
    if U.ndim == 2:
        out = np.einsum("ij,bpjq->bpiq", U, v, optimize=True)
    else:
        out = np.einsum("bij,bpjq->bpiq", U, v, optimize=True)
    return out.reshape(B, -1)


def _apply_diag_1m(state, diag, mode, M, c):
    B = state.shape[0]
    v = state.reshape(B, c ** mode, c, -1)
    return (v * diag[None, None, :, None]).reshape(B, -1)


def _apply_2m(state, U2, i, j, M, c):
    B = state.shape[0]
    if M == 2:
        return state @ U2.T
    v = state.reshape((B,) + (c,) * M)
    v = np.moveaxis(v, (1 + i, 1 + j), (1, 2))
    shp = v.shape
    out = np.einsum("xy,byr->bxr", U2, v.reshape(B, c * c, -1), optimize=True)
    out = np.moveaxis(out.reshape(shp), (1, 2), (1 + i, 1 + j))
    return np.ascontiguousarray(out).reshape(B, -1)


def _tape(cfg: CVPolicyConfig):
    """Gate sequence after the encoding displacements."""
    ops = []
    pairs = clements_pairs(cfg.n_modes)
    for l in range(cfg.n_layers):
        for k, (i, j) in enumerate(pairs):
            ops.append(("bs1", l, k, i, j))
        for m in range(cfg.n_modes):
            ops.append(("sq", l, m))
        for k, (i, j) in enumerate(pairs):
            ops.append(("bs2", l, k, i, j))
        for m in range(cfg.n_modes):
            ops.append(("disp", l, m))
        for m in range(cfg.n_modes):
            ops.append(("kerr", l, m))
    return ops


def _gate_mats(op, arrays, c):
    """(U, tangents...) for a tape entry; cached per parameter value."""
    kind = op[0]
    if kind in ("bs1", "bs2"):
        th, ph = arrays[kind][op[1], op[2]]
        return beamsplitter_mat(float(th), float(ph), c)
    if kind == "sq":
        r, ph = arrays["sq"][op[1], op[2]]
        return squeeze_mat(float(r), float(ph), c)
    if kind == "disp":
        r, ph = arrays["disp"][op[1], op[2]]
        return displace_mat(float(r), float(ph), c)
    if kind == "kerr":
        return kerr_mat(float(arrays["kerr"][op[1], op[2]]), c)
    raise ValueError(kind)


def _apply_op(state, op, arrays, cfg, dagger=False):
    c, M = cfg.cutoff, cfg.n_modes
    mats = _gate_mats(op, arrays, c)
    U = mats[0]
    if dagger:
        U = U.conj().T
    if op[0] in ("bs1", "bs2"):
        return _apply_2m(state, U, op[3], op[4], M, c)
    if op[0] == "kerr":
        d = U.diagonal()
        return _apply_diag_1m(state, d, op[2], M, c)
    return _apply_1m(state, U, op[2], M, c)


def prepare_displacements(z: Tensor, cfg: CVPolicyConfig) -> Tensor:
    """Differentiable map from latent/observation to per-mode displacement
    amplitudes along the momentum axis."""
    if cfg.obs_scaling == "centered":
        return cfg.disp_scale * (2.0 * z - 1.0)
    return cfg.disp_scale * z


def _initial_state(cfg: CVPolicyConfig, batch: int) -> np.ndarray:
    single = prepare_squeezed(cfg.init_squeeze_r, cfg.init_squeeze_phi,
                              cfg.cutoff, min_norm=0.0)
    state = single
    for _ in range(cfg.n_modes - 1):
        state = np.kron(state, single)
    return np.broadcast_to(state, (batch, state.size)).copy()


def simulate_cv(arrays: dict[str, np.ndarray], rs: np.ndarray,
                cfg: CVPolicyConfig) -> np.ndarray:
    """Forward pass; ``rs`` (B, M) are displacement amplitudes per mode."""
    c, M = cfg.cutoff, cfg.n_modes
    state = _initial_state(cfg, rs.shape[0])
    D, _ = _encode_mats(rs.reshape(-1), c, with_tangent=False)
    D = D.reshape(rs.shape[0], M, c, c)
    for m in range(M):
        state = _apply_1m(state, D[:, m], m, M, c)
    for op in _tape(cfg):
        state = _apply_op(state, op, arrays, cfg)
    return state


def cv_expectation_p(states: np.ndarray, wires, cfg: CVPolicyConfig):
    """Renormalized momentum expectations and the squared norms.

    Returns ``(expvals (B, len(wires)), norm2 (B,))``; expectation values are
    ``<psi|P_j|psi> / <psi|psi>`` to compensate truncation loss.
    """
    c, M = cfg.cutoff, cfg.n_modes
    B = states.shape[0]
    norm2 = np.einsum("bd,bd->b", states.conj(), states).real
    out = np.empty((B, len(wires)))
    P = momentum_op(c)
    for k, w in enumerate(wires):
        pw = _apply_1m(states, P, w, M, c)
        out[:, k] = np.einsum("bd,bd->b", states.conj(), pw).real / norm2
    return out, norm2


def _cv_adjoint(arrays, rs, cfg, final_state, g):
    """Gradient of sum_bj g[b,j] <P_j>_renorm via a Wirtinger adjoint walk.

    Seeds nu = sum_j g_j [P_j psi / d - (n_j / d^2) psi]  (d = norm^2,
    n_j = <psi|P_j|psi>), then pulls (psi, nu) back through inverted gates;
    each parameter theta contributes 2 Re(nu^dag (dU/dtheta) psi_before).
    Returns (d_arrays, d_rs).
    """
    c, M = cfg.cutoff, cfg.n_modes
    B = rs.shape[0]
    psi = final_state
    d = np.einsum("bd,bd->b", psi.conj(), psi).real
    P = momentum_op(c)
    nu = np.zeros_like(psi)
    for j in range(g.shape[1]):
        pw = _apply_1m(psi, P, j, M, c)
        n_j = np.einsum("bd,bd->b", psi.conj(), pw).real
        nu += (g[:, j] / d)[:, None] * pw \
            - (g[:, j] * n_j / (d * d))[:, None] * psi

    d_arrays = {k: np.zeros_like(v) for k, v in arrays.items()}
    for op in reversed(_tape(cfg)):
        kind = op[0]
        mats = _gate_mats(op, arrays, c)
        # move psi to the pre-gate state first, then score tangents there
        psi = _apply_op(psi, op, arrays, cfg, dagger=True)
        if kind in ("bs1", "bs2"):
            i, j = op[3], op[4]
            for t, dU in enumerate(mats[1:]):
                dpsi = _apply_2m(psi, dU, i, j, M, c)
                contrib = 2.0 * np.einsum("bd,bd->b", nu.conj(), dpsi).real
                d_arrays[kind][op[1], op[2], t] += contrib.sum()
            nu = _apply_2m(nu, mats[0].conj().T, i, j, M, c)
        else:
            mode = op[2]
            for t, dU in enumerate(mats[1:]):
                dpsi = _apply_1m(psi, dU, mode, M, c)
                contrib = 2.0 * np.einsum("bd,bd->b", nu.conj(), dpsi).real
                if kind == "kerr":
                    d_arrays["kerr"][op[1], mode] += contrib.sum()
                else:
                    d_arrays[kind][op[1], mode, t] += contrib.sum()
            nu = _apply_1m(nu, mats[0].conj().T, mode, M, c)

    # encoding displacements: per-sample tangents
    D, dD = _encode_mats(rs.reshape(-1), c, with_tangent=True)
    D = D.reshape(B, M, c, c)
    dD = dD.reshape(B, M, c, c)
    d_rs = np.empty_like(rs)
    for m in reversed(range(M)):
        Ddag = np.conjugate(np.swapaxes(D[:, m], -1, -2))
        psi = _apply_1m(psi, Ddag, m, M, c)
        dpsi = _apply_1m(psi, dD[:, m], m, M, c)
        d_rs[:, m] = 2.0 * np.einsum("bd,bd->b", nu.conj(), dpsi).real
        nu = _apply_1m(nu, Ddag, m, M, c)
    return d_arrays, d_rs


def cv_policy_logits(params: dict[str, Tensor], rs: Tensor,
                     cfg: CVPolicyConfig, prefix: str = "policy",
                     norms_out: list | None = None) -> Tensor:
    """Differentiable renormalized ``<P_j>`` readout on the first
    ``n_actions`` modes; ``rs`` (B, n_modes) are displacement amplitudes."""
    if rs.ndim != 2 or rs.shape[1] != cfg.n_modes:
        raise ad.ShapeError(f"displacements shape {rs.shape} does not match "
                            f"{cfg.n_modes} modes")
    tensors = {k: params[f"{prefix}.{k}"] for k in _PARAM_KEYS}
    arrays = {k: t.data for k, t in tensors.items()}
    state = simulate_cv(arrays, rs.data, cfg)
    exp, norm2 = cv_expectation_p(state, range(cfg.n_actions), cfg)
    deficiency = float(np.max(1.0 - norm2))
    if deficiency > cfg.trunc_tol:
        warnings.warn(
            f"state norm deficiency {deficiency:.3e} exceeds tolerance "
            f"{cfg.trunc_tol:g} (cutoff {cfg.cutoff})", TruncationWarning,
            stacklevel=2)
    if norms_out is not None:
        norms_out.append(norm2.copy())

    rs_data = rs.data

    def vjp(g):
        d_arrays, d_rs = _cv_adjoint(arrays, rs_data, cfg, state, g)
        return [d_arrays[k] for k in _PARAM_KEYS] + [d_rs]

    inputs = [tensors[k] for k in _PARAM_KEYS] + [rs]
    return ad.custom(inputs, exp, vjp)
