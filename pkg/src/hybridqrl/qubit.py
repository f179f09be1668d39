"""Batched qubit state-vector simulator with analytic adjoint-mode gradients.

Circuit family: an angle-embedding layer (RY per wire, angle supplied per
sample) followed by strongly-entangling variational layers — per wire the
rotation RZ(a)·RY(b)·RZ(c), then a CNOT ring whose target offset cycles with
layer depth.  With re-uploading enabled the embedding repeats before every
layer.  A layer optionally holds two rotation-set/ring blocks (ring offsets
1 and 2) instead of one.  Readout is ``<Z_j>`` on the first ``n_actions``
wires; those values feed a classical softmax downstream.

States are ``(batch, 2**n_qubits)`` complex128.  Gradients come from the
adjoint walk: after the forward pass, the state and a cotangent vector are
pulled backward through the inverted gates, yielding exact derivatives for
both the shared rotation parameters and the per-sample embedding angles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["QubitPolicyConfig", "init_policy_params", "n_policy_params",
           "prepare_angles", "policy_logits", "simulate_states",
           "expectation_z"]


@dataclass(frozen=True)
class QubitPolicyConfig:
    n_qubits: int
    n_layers: int
    n_actions: int
    reupload: bool = True
    obs_scaling: str = "pi"  # 'pi' | 'arctan_cbrt' | 'identity'
    n_blocks: int = 1  # rotation-set + CNOT-ring repetitions per layer

    def __post_init__(self):
        if self.n_actions > self.n_qubits:
            raise ValueError(f"need n_actions <= n_qubits, got "
                             f"{self.n_actions} > {self.n_qubits}")
        if self.obs_scaling not in ("pi", "arctan_cbrt", "identity"):
            raise ValueError(f"unknown obs_scaling {self.obs_scaling!r}")
        if self.n_blocks not in (1, 2):
            raise ValueError(f"n_blocks must be 1 or 2, got {self.n_blocks}")


def n_policy_params(cfg: QubitPolicyConfig) -> int:
    """Three rotation angles per wire per rotation set."""
    return 3 * cfg.n_qubits * cfg.n_layers * cfg.n_blocks


def init_policy_params(cfg: QubitPolicyConfig, rng: np.random.Generator,
                       prefix: str = "policy") -> dict[str, Tensor]:
    w = rng.uniform(-np.pi, np.pi,
                    size=(cfg.n_layers * cfg.n_blocks, cfg.n_qubits, 3))
    return {f"{prefix}.weights": ad.parameter(w, name=f"{prefix}.weights")}


def prepare_angles(z: Tensor, cfg: QubitPolicyConfig) -> Tensor:
    """Map observations/latents to embedding angles (differentiably).

    'pi': angle = pi * z, for inputs already in (0, 1) such as a sigmoid
    bottleneck.  'arctan_cbrt': angle = (4/pi) * cbrt(arctan z), an odd, bounded
    squash for unbounded raw observations.  'identity': use z as-is.
    """
    if cfg.obs_scaling == "pi":
        return np.pi * z
    if cfg.obs_scaling == "arctan_cbrt":
        return (4.0 / np.pi) * ad.cbrt(ad.arctan(z))
    return z


# ----------------------------------------------------------------------
# raw state propagation


def _apply_1q(state: np.ndarray, U: np.ndarray, wire: int, n: int) -> np.ndarray:
    B = state.shape[0]
    v = state.reshape(B, 2 ** wire, 2, -1)
    if U.ndim == 2:
        out = np.einsum("ij,bpjq->bpiq", U, v)
    else:  # per-sample gate, U has shape (B, 2, 2)
        out = np.einsum("bij,bpjq->bpiq", U, v)
    return out.reshape(B, -1)


def _apply_cnot(state: np.ndarray, c: int, t: int, n: int) -> np.ndarray:
    B = state.shape[0]
    if c < t:
        v = state.reshape(B, 2 ** c, 2, 2 ** (t - c - 1), 2, -1)
        out = v.copy()
        out[:, :, 1, :, 0, :] = v[:, :, 1, :, 1, :]
        out[:, :, 1, :, 1, :] = v[:, :, 1, :, 0, :]
    else:
        v = state.reshape(B, 2 ** t, 2, 2 ** (c - t - 1), 2, -1)
        out = v.copy()
        out[:, :, 0, :, 1, :] = v[:, :, 1, :, 1, :]
        out[:, :, 1, :, 1, :] = v[:, :, 0, :, 1, :]
    return out.reshape(B, -1)


def _apply_pauli(state: np.ndarray, pauli: str, wire: int) -> np.ndarray:
    B = state.shape[0]
    v = state.reshape(B, 2 ** wire, 2, -1)
    out = np.empty_like(v)
    if pauli == "Z":
        out[:, :, 0, :] = v[:, :, 0, :]
        out[:, :, 1, :] = -v[:, :, 1, :]
    elif pauli == "Y":
        out[:, :, 0, :] = -1j * v[:, :, 1, :]
        out[:, :, 1, :] = 1j * v[:, :, 0, :]
    else:
        raise ValueError(pauli)
    return out.reshape(B, -1)


def _rz(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]])


def _ry(theta) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    if np.ndim(theta) == 0:
        return np.array([[c, -s], [s, c]], dtype=complex)
    U = np.zeros(np.shape(theta) + (2, 2), dtype=complex)
    U[..., 0, 0] = c
    U[..., 0, 1] = -s
    U[..., 1, 0] = s
    U[..., 1, 1] = c
    return U


def _ring_offset(layer: int, n: int) -> int:
    return (layer % (n - 1)) + 1 if n > 1 else 0


def _tape(weights: np.ndarray, angles: np.ndarray, cfg: QubitPolicyConfig):
    """Flat gate list: ('embed', wire) | ('rot', set, wire, axis_index) |
    ('cnot', control, target).

    With a single block per layer the CNOT-ring offset cycles with depth;
    with two blocks each layer holds two rotation sets whose rings use fixed
    offsets 1 and 2 (wrapped to the valid range for small wire counts).
    """
    ops = []
    n = cfg.n_qubits
    for l in range(cfg.n_layers):
        if cfg.reupload or l == 0:
            for q in range(n):
                ops.append(("embed", q))
        for b in range(cfg.n_blocks):
            s = l * cfg.n_blocks + b
            for q in range(n):
                ops.append(("rotz", s, q, 0))
                ops.append(("roty", s, q, 1))
                ops.append(("rotz", s, q, 2))
            if cfg.n_blocks == 1:
                r = _ring_offset(l, n)
            else:
                r = (b % (n - 1)) + 1 if n > 1 else 0
            if r:
                for q in range(n):
                    ops.append(("cnot", q, (q + r) % n))
    return ops


def _gate_unitary(op, weights, angles):
    kind = op[0]
    if kind == "embed":
        return _ry(angles[:, op[1]])
    if kind == "rotz":
        return _rz(weights[op[1], op[2], op[3]])
    if kind == "roty":
        return _ry(weights[op[1], op[2], op[3]])
    raise ValueError(kind)


def simulate_states(weights: np.ndarray, angles: np.ndarray,
                    cfg: QubitPolicyConfig) -> np.ndarray:
    """Run the circuit; returns final states of shape (B, 2**n_qubits)."""
    B = angles.shape[0]
    n = cfg.n_qubits
    state = np.zeros((B, 2 ** n), dtype=complex)
    state[:, 0] = 1.0
    for op in _tape(weights, angles, cfg):
        if op[0] == "cnot":
            state = _apply_cnot(state, op[1], op[2], n)
        else:
            wire = op[1] if op[0] == "embed" else op[2]
            state = _apply_1q(state, _gate_unitary(op, weights, angles), wire, n)
    return state


def expectation_z(states: np.ndarray, wires, n: int) -> np.ndarray:
    """<Z_w> for each requested wire; shape (B, len(wires))."""
    B = states.shape[0]
    probs = np.abs(states) ** 2
    out = np.empty((B, len(wires)))
    for k, w in enumerate(wires):
        p = probs.reshape(B, 2 ** w, 2, -1)
        out[:, k] = p[:, :, 0, :].sum(axis=(1, 2)) - p[:, :, 1, :].sum(axis=(1, 2))
    return out


# ----------------------------------------------------------------------
# adjoint gradients


def _adjoint_grads(weights: np.ndarray, angles: np.ndarray,
                   cfg: QubitPolicyConfig, final_state: np.ndarray,
                   g: np.ndarray):
    """Exact gradients of ``sum_b sum_j g[b,j] <Z_j>_b``.

    Returns (d_weights summed over batch, d_angles per sample).  Walks the
    final state and the cotangent Sigma_j g_j Z_j |psi> backward through the
    inverted tape; each parametrized gate contributes
    Im(<lambda| G |psi_after_gate>) with G the gate's Pauli generator.
    """
    n = cfg.n_qubits
    B = angles.shape[0]
    psi = final_state
    lam = np.zeros_like(psi)
    for j in range(g.shape[1]):
        lam += g[:, j, None] * _apply_pauli(psi, "Z", j)

    d_weights = np.zeros_like(weights)
    d_angles = np.zeros_like(angles)
    for op in reversed(_tape(weights, angles, cfg)):
        kind = op[0]
        if kind == "cnot":
            psi = _apply_cnot(psi, op[1], op[2], n)
            lam = _apply_cnot(lam, op[1], op[2], n)
            continue
        wire = op[1] if kind == "embed" else op[2]
        pauli = "Z" if kind == "rotz" else "Y"
        gpsi = _apply_pauli(psi, pauli, wire)
        # d<.>/dtheta = 2 Re(<lam| -i/2 G |psi>) = Im(<lam| G |psi>)
        per_sample = np.einsum("bd,bd->b", lam.conj(), gpsi).imag
        if kind == "embed":
            d_angles[:, wire] += per_sample
        else:
            d_weights[op[1], op[2], op[3]] += per_sample.sum()
        U = _gate_unitary(op, weights, angles)
        Udag = np.conjugate(np.swapaxes(U, -1, -2))
        psi = _apply_1q(psi, Udag, wire, n)
        lam = _apply_1q(lam, Udag, wire, n)
    return d_weights, d_angles


def policy_logits(params: dict[str, Tensor], angles: Tensor,
                  cfg: QubitPolicyConfig, prefix: str = "policy") -> Tensor:
    """Differentiable ``<Z_j>`` readout, wired into the autodiff graph.

    ``angles`` has shape (B, n_qubits); output (B, n_actions).
    """
    wt = params[f"{prefix}.weights"]
    if angles.ndim != 2 or angles.shape[1] != cfg.n_qubits:
        raise ad.ShapeError(f"angles shape {angles.shape} does not match "
                            f"{cfg.n_qubits} wires")
    a = angles.data
    w = wt.data
    state = simulate_states(w, a, cfg)
    exp = expectation_z(state, range(cfg.n_actions), cfg.n_qubits)

    def vjp(g):
        dw, da = _adjoint_grads(w, a, cfg, state, g)
        return [dw, da]

    return ad.custom([wt, angles], exp, vjp)
