"""Energy functional, its two-term expansion, and configuration ascent.

The functional

    J_s[u] = 1/2 int |grad u|^2 - int k e^{-s phi1} e^u

evaluated at the multi-bubble approximation expands, for admissible
configurations, into

    16 pi sum_{i != j} log|xi_i - xi_j|  +  8 pi s sum_j phi1(xi_j)  +  O(1)

(ordered pairs, each unordered pair counted twice).  Configurations are
selected by projected gradient ascent of the expansion over the admissible
set: height deficit within 1/sqrt(s), membership in Lambda, pairwise
separation above s^-beta.

Quadrature of J_s[U] needs care: the bubble cores carry an O(log(1/scale))
share of the gradient integral on sub-cell scales, invisible to any nodal
sum once the core drops under the mesh width.  Both integrals are
therefore split by a partition of unity into closed-form radial core
integrals (exact for the bubble part, second-moment-corrected for the
smooth modulation) plus a lattice sum of the smooth remainder evaluated
pointwise from analytic bubble gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .ansatz import Ansatz, SpikeConfiguration, make_configuration, star_weight_at
from .geometry import ScalarField, gradient, integrate, interpolate
from .problem import ProblemData

__all__ = [
    "EnergyReport",
    "energy_full",
    "energy_of_ansatz",
    "energy_expansion",
    "energy_report",
    "expansion_value",
    "expansion_gradient",
    "maximize_configuration",
]


@dataclass(frozen=True)
class EnergyReport:
    """Full energy vs closed-form expansion at one configuration."""

    j_full: float
    j_expansion: float
    interaction_term: float
    height_term: float

    @property
    def discrepancy(self) -> float:
        return self.j_full - self.j_expansion


def energy_full(u: ScalarField, data: ProblemData) -> float:
    """Plain quadrature of J_s[u]; exponential term assembled in log space
    with max subtraction, adequate for fields resolved by the grid."""
    gx, gy = gradient(u)
    grad_sq = ScalarField(u.grid, gx.values**2 + gy.values**2)
    dirichlet = 0.5 * integrate(grad_sq)
    expo = data.log_k.values - data.s * data.phi1.values + u.values
    peak = float(expo.max())
    nonlin = math.exp(min(peak, 300.0)) * float(
        np.sum(np.exp(expo - peak) * u.grid.cell_weights)
    )
    return dirichlet - nonlin


def _core_radii(config: SpikeConfiguration, data: ProblemData) -> np.ndarray | None:
    """Core window radius per spike for the partition of unity, or None
    when the windows cannot be separated (plain quadrature suffices then)."""
    grid = data.grid
    r = np.empty(config.m)
    for j in range(config.m):
        room = -float(data.domain.sdf(*config.xi[j]))
        r[j] = min(0.3 * room, 0.15)
    if config.m > 1:
        r = np.minimum(r, 0.3 * config.min_separation)
    core = config.mu * config.delta_j
    lo = np.maximum(6 * grid.h, 10 * core)
    if (lo > r).any():
        return None
    return np.maximum(r, lo)


def _eta(r, r0):
    """Quintic smoothstep window: 1 on [0, r0], 0 beyond 2 r0."""
    t = np.clip((np.asarray(r, float) - r0) / r0, 0.0, 1.0)
    return 1.0 - t**3 * (10 - 15 * t + 6 * t**2)


def energy_of_ansatz(ansatz: Ansatz, data: ProblemData) -> float:
    """J_s[U] with singular-core extraction around each spike."""
    config = ansatz.config
    grid = data.grid
    r0 = _core_radii(config, data)
    if r0 is None:
        return energy_full(ansatz.U, data)

    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    m = config.m
    a = (config.mu * config.delta_j) ** 2

    # analytic bubble gradients plus discrete gradients of the smooth parts
    gx = np.zeros_like(X)
    gy = np.zeros_like(Y)
    r2s = []
    for j in range(m):
        dx = X - config.xi[j][0]
        dy = Y - config.xi[j][1]
        r2 = dx * dx + dy * dy
        r2s.append(r2)
        gx += -4.0 * dx / (a[j] + r2)
        gy += -4.0 * dy / (a[j] + r2)
    for Hj in ansatz.corrections:
        hx, hy = gradient(Hj)
        gx += hx.values
        gy += hy.values

    eta = [
        _eta(np.sqrt(r2s[j]), r0[j]) for j in range(m)
    ]
    eta_sum = np.minimum(sum(eta), 1.0)

    # outer lattice parts
    wq = grid.cell_weights
    grad_outer = 0.5 * float(np.sum((1.0 - eta_sum) * (gx * gx + gy * gy) * wq))
    expo = data.log_k.values - data.s * data.phi1.values + ansatz.U.values
    mass_outer = float(np.sum((1.0 - eta_sum) * np.exp(np.clip(expo, None, 300.0)) * wq))

    grad_core = 0.0
    mass_core = 0.0
    for j in range(m):
        aj = a[j]
        R0 = r0[j]

        # 1/2 int eta |grad u_j|^2 : exact radial quadrature
        val, _ = quad(
            lambda r: _eta(r, R0) * 16 * r**3 / (aj + r**2) ** 2,
            0.0,
            2 * R0,
            points=[math.sqrt(aj), R0],
            limit=200,
        )
        grad_core += 0.5 * 2 * math.pi * val

        # cross term 2 * 1/2 int eta grad u_j . g_j with g_j the smooth rest:
        # odd part vanishes; the trace part uses div g_j at the spike,
        # which is the sum of the other bubbles' Laplacians (corrections
        # are harmonic)
        div_g = 0.0
        for l in range(m):
            if l != j:
                d2 = float(((config.xi[j] - config.xi[l]) ** 2).sum())
                div_g += -8.0 * a[l] / (a[l] + d2) ** 2
        val, _ = quad(
            lambda r: _eta(r, R0) * r**3 / (aj + r**2),
            0.0,
            2 * R0,
            points=[math.sqrt(aj), R0],
            limit=200,
        )
        grad_core += -2.0 * math.pi * div_g * val

        # 1/2 int eta |g_j|^2 : smooth, lattice sum
        gjx = gx + 4.0 * (X - config.xi[j][0]) / (aj + r2s[j])
        gjy = gy + 4.0 * (Y - config.xi[j][1]) / (aj + r2s[j])
        grad_core += 0.5 * float(np.sum(eta[j] * (gjx**2 + gjy**2) * wq))

        # int eta k e^{-s phi} e^U = int eta W_j(r) * Phi_j(x) with
        # W_j the exact bubble mass density and Phi_j smooth; expand Phi to
        # second order (odd moment vanishes)
        logPhi = (
            data.log_k.values
            - data.s * data.phi1.values
            + ansatz.U.values
            - (np.log(8 * aj) - 2 * np.log(aj + r2s[j]))
        )
        phi0 = float(_interp_node(logPhi, grid, config.xi[j]))
        lapPhi = _laplacian_of_smooth(logPhi, grid, config.xi[j], phi0)
        I0, _ = quad(
            lambda r: _eta(r, R0) * 8 * aj * r / (aj + r**2) ** 2,
            0.0,
            2 * R0,
            points=[math.sqrt(aj), R0],
            limit=200,
        )
        I2, _ = quad(
            lambda r: _eta(r, R0) * 8 * aj * r**3 / (aj + r**2) ** 2,
            0.0,
            2 * R0,
            points=[math.sqrt(aj), R0],
            limit=200,
        )
        mass_core += 2 * math.pi * math.exp(phi0) * (I0 + 0.25 * lapPhi * I2)

    return grad_outer + grad_core - (mass_outer + mass_core)


def _interp_node(values: np.ndarray, grid, p) -> float:
    fld = ScalarField(grid, values)
    return float(interpolate(fld, np.asarray(p, float)))


def _laplacian_of_smooth(values: np.ndarray, grid, p, center_val: float) -> float:
    """Five-point estimate of (Lap + |grad|^2) e^{f} / e^{f} at p for the
    modulation factor Phi = e^f: returns Lap Phi / Phi."""
    h = 2 * grid.h
    vals = []
    for dx, dy in ((h, 0), (-h, 0), (0, h), (0, -h)):
        vals.append(_interp_node(values, grid, (p[0] + dx, p[1] + dy)))
    lap_f = (sum(vals) - 4 * center_val) / h**2
    gx = (vals[0] - vals[1]) / (2 * h)
    gy = (vals[2] - vals[3]) / (2 * h)
    return lap_f + gx * gx + gy * gy


def expansion_value(xi: np.ndarray, s: float, data: ProblemData) -> tuple[float, float, float]:
    """(total, interaction, height): 16 pi sum_{i != j} log|xi_i - xi_j|
    over ordered pairs plus 8 pi s sum_j phi1(xi_j)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    m = xi.shape[0]
    inter = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                d = float(np.hypot(*(xi[i] - xi[j])))
                if d == 0.0:
                    raise ValueError("coincident spikes in expansion")
                inter += math.log(d)
    inter *= 16 * math.pi
    height = 8 * math.pi * s * sum(float(interpolate(data.phi1, p)) for p in xi)
    return inter + height, inter, height


def energy_expansion(xi, s: float, data: ProblemData) -> EnergyReport:
    """Closed-form expansion only (j_full is NaN until an ansatz energy is
    attached via energy_report)."""
    total, inter, height = expansion_value(xi, s, data)
    return EnergyReport(
        j_full=math.nan, j_expansion=total, interaction_term=inter, height_term=height
    )


def energy_report(ansatz: Ansatz, data: ProblemData) -> EnergyReport:
    total, inter, height = expansion_value(ansatz.config.xi, ansatz.config.s, data)
    return EnergyReport(
        j_full=energy_of_ansatz(ansatz, data),
        j_expansion=total,
        interaction_term=inter,
        height_term=height,
    )


def expansion_gradient(xi: np.ndarray, s: float, data: ProblemData, grad_phi) -> np.ndarray:
    """Analytic ascent direction: 32 pi sum_{j != k} (xi_k - xi_j)/|.|^2
    plus 8 pi s grad phi1(xi_k)."""
    xi = np.atleast_2d(xi)
    m = xi.shape[0]
    g = np.zeros_like(xi)
    for k in range(m):
        for j in range(m):
            if j != k:
                d = xi[k] - xi[j]
                g[k] += 32 * math.pi * d / float(d @ d)
        g[k] += 8 * math.pi * s * grad_phi(xi[k])
    return g


def _phi_gradient_interp(data: ProblemData):
    gx, gy = gradient(data.phi1)

    def grad_phi(p):
        return np.array(
            [float(interpolate(gx, p)), float(interpolate(gy, p))]
        )

    return grad_phi


def _project_to_admissible(xi: np.ndarray, s: float, data: ProblemData, beta: float, grad_phi):
    """Alternating projection: lift low spikes along grad phi1, then push
    close pairs apart to the separation floor.  Capped at 20 sweeps."""
    xi = xi.copy()
    m = xi.shape[0]
    height_floor = max(data.lambda_threshold, 1.0 - 1.0 / math.sqrt(s))
    sep_floor = s ** (-beta)
    for _ in range(20):
        moved = False
        for j in range(m):
            for _ in range(20):
                if float(interpolate(data.phi1, xi[j])) >= height_floor:
                    break
                g = grad_phi(xi[j])
                ng = float(np.hypot(*g))
                if ng < 1e-14:
                    break
                xi[j] += (0.5 * data.grid.h) * g / ng
                moved = True
        for a in range(m):
            for b in range(a + 1, m):
                d = xi[a] - xi[b]
                dist = float(np.hypot(*d))
                if dist < sep_floor:
                    push = (sep_floor - dist) / 2 + 1e-12
                    unit = d / dist if dist > 0 else np.array([1.0, 0.0])
                    xi[a] += push * unit
                    xi[b] -= push * unit
                    moved = True
        if not moved:
            break
    return xi


def maximize_configuration(
    m: int,
    s: float,
    data: ProblemData,
    seed_configuration=None,
    beta: float | None = None,
    seed: int = 0,
    max_iter: int = 400,
    trace: list | None = None,
) -> SpikeConfiguration:
    """Projected gradient ascent of the expansion over admissible tuples.

    Initialized from a regular m-gon of radius 1/sqrt(s) around the phi1
    maximizer (plus 4 random rotations, best-of), or from the provided
    seed configuration.  For m = 1 this reduces to ascent onto the phi1
    maximum.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if beta is None:
        beta = default_beta(m)
    grid = data.grid
    grad_phi = _phi_gradient_interp(data)

    phi = data.phi1.values.copy()
    phi[grid.kind != 0] = -np.inf
    imax, jmax = np.unravel_index(np.argmax(phi), phi.shape)
    xbar = np.array([grid.xs[imax], grid.ys[jmax]])

    starts = []
    if seed_configuration is not None:
        starts.append(np.atleast_2d(np.asarray(seed_configuration, dtype=float)))
    else:
        rng = np.random.default_rng(seed)
        angles0 = [0.0] + list(rng.uniform(0, 2 * math.pi / max(m, 1), size=4))
        radius = 1.0 / math.sqrt(s)
        for a0 in angles0:
            if m == 1:
                starts.append(xbar[None, :].copy())
            else:
                ang = a0 + 2 * math.pi * np.arange(m) / m
                starts.append(xbar + radius * np.column_stack([np.cos(ang), np.sin(ang)]))
            if m == 1:
                break

    best_xi, best_val = None, -math.inf
    for xi0 in starts:
        xi = _project_to_admissible(xi0, s, data, beta, grad_phi)
        val, _, _ = expansion_value(xi, s, data)
        step = 1.0 / (8 * math.pi * s * 10.0)
        stagnant = 0
        for it in range(max_iter):
            g = expansion_gradient(xi, s, data, grad_phi)
            gn = float(np.abs(g).max())
            if gn * step < 1e-12 * max(1.0, abs(val)):
                break
            accepted = False
            for _ in range(25):
                xi_t = _project_to_admissible(xi + step * g, s, data, beta, grad_phi)
                val_t, _, _ = expansion_value(xi_t, s, data)
                if val_t > val:
                    accepted = True
                    break
                step /= 2
            if trace is not None:
                trace.append((it, val_t if accepted else val, step))
            if not accepted:
                stagnant += 1
                if stagnant > 2:
                    break
                continue
            # snap single spikes onto the grid maximizer of interpolated phi1
            xi, val = xi_t, val_t
            step *= 1.5
        if m == 1:
            # the interpolated phi1 attains its max at a node: finish there
            node_val, _, _ = expansion_value(xbar[None, :], s, data)
            if node_val >= val:
                xi, val = xbar[None, :].copy(), node_val
        if val > best_val:
            best_xi, best_val = xi, val

    return make_configuration(best_xi, s, data, beta=beta)
