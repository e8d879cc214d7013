"""End-to-end orchestration: build the problem, optimize the spike
configuration, assemble the ansatz, correct, refine, and verify the
quantitative predictions (mass 8*pi*m, spike count and placement,
far-field Green behavior, energy expansion).

Artifacts per run: a flat key=value manifest (schema 1), optional field
dumps and trace CSVs.  Sweeps over s run entries concurrently, one output
directory per entry; BUBBLEFORGE_THREADS caps the worker count.
"""

from __future__ import annotations

import math
import os
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ansatz import Ansatz, assemble_ansatz, make_configuration, default_beta
from .corrector import CorrectionResult, RefinedSolution, contract, detect_spikes, newton_refine
from .energy import EnergyReport, energy_report, maximize_configuration
from .geometry import Domain, ScalarField, dump_field_csv, rectangle, unit_disk, unit_square
from .green import GreenEvaluator
from .linearized import build_kernel_basis, build_operator
from .problem import (
    DomainCore,
    ProblemData,
    build_core,
    in3_residual,
    mass_in1,
    mass_in3,
    setup,
    to_in1_solution,
)
from .ansatz import star_norm

__all__ = [
    "RunConfig",
    "Diagnostics",
    "RunResult",
    "PipelineError",
    "run",
    "sweep",
    "far_field_check",
    "parse_domain",
]

MANIFEST_SCHEMA = 1


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def parse_domain(spec: str) -> Domain:
    """"disk" | "square" | "rect:W:H"."""
    if spec in ("disk", "unit-disk"):
        return unit_disk()
    if spec in ("square", "unit-square"):
        return unit_square()
    if spec.startswith("rect:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad rectangle spec {spec!r} (want rect:W:H)")
        return rectangle(float(parts[1]), float(parts[2]))
    raise ValueError(f"unknown domain {spec!r}")


@dataclass(frozen=True)
class RunConfig:
    domain: str = "disk"
    n: int = 257
    m: int = 1
    s: float = 10.0
    beta: float | None = None  # default m^2 + m + 1
    h_source: str = "zero"
    lambda_threshold: float = 0.9
    out_dir: str | None = None
    trace: bool = False
    dump_fields: bool = False
    seed: int = 0
    eig_tol: float = 1e-9
    newton_tol: float = 1e-8

    def validate(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.s <= 0:
            raise ValueError("s must be positive")
        if self.n % 2 == 0:
            raise ValueError("n must be odd (node-centered symmetry)")
        if self.n < 17:
            raise ValueError("n must be at least 17")
        parse_domain(self.domain)


@dataclass(frozen=True)
class Diagnostics:
    mass: float
    mass_forced_form: float
    per_spike_mass: np.ndarray
    spike_count: int
    spike_locations: np.ndarray
    min_separation: float
    far_field_deviation: float
    energy: EnergyReport
    ansatz_star_norm: float
    final_residual_star: float
    psi_inf: float
    newton_iterations: int
    newton_residual: float
    checks: dict

    @property
    def all_hard_checks_pass(self) -> bool:
        return all(self.checks.values())


@dataclass(frozen=True)
class RunResult:
    config: RunConfig
    data: ProblemData
    configuration: object
    ansatz: Ansatz
    correction: CorrectionResult
    refined: RefinedSolution
    diagnostics: Diagnostics
    manifest_path: Path | None


def _probe_points(data: ProblemData, xi: np.ndarray, core_scale: float, count: int = 16):
    """Probe ring well inside the domain, away from every spike."""
    domain = data.domain
    if domain.kind == "unit-disk":
        center = np.zeros(2)
        radius = 0.8
    else:
        center = np.array([domain.width / 2, domain.height / 2])
        radius = 0.38 * min(domain.width, domain.height)
    ang = 2 * math.pi * (np.arange(count) + 0.5) / count
    pts = center + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    keep = []
    min_clear = max(5 * core_scale, 10 * data.grid.h)
    for p in pts:
        if all(np.hypot(*(p - q)) >= min_clear for q in xi):
            keep.append(p)
    if not keep:
        raise ValueError("no probe point clears the spike exclusion radius")
    return np.array(keep)


def far_field_check(
    u: ScalarField, xi: np.ndarray, data: ProblemData, probes: np.ndarray
) -> float:
    """sup over probes of |u - sum_i G(., xi_i)|; the multi-spike solution
    approaches the superposed Green field away from the spikes."""
    green = data.green
    worst = 0.0
    for p in probes:
        g = sum(green.green(p, q) for q in xi)
        from .geometry import interpolate

        worst = max(worst, abs(float(interpolate(u, p)) - g))
    return float(worst)


def _per_spike_masses(u: ScalarField, data: ProblemData, xi: np.ndarray, radii: np.ndarray):
    grid = data.grid
    ii, jj = grid.interior_ij[:, 0], grid.interior_ij[:, 1]
    px = grid.xs[ii]
    py = grid.ys[jj]
    expo = (data.log_k.values - data.s * data.phi1.values + u.values)[ii, jj]
    integ = np.exp(np.clip(expo, None, 300.0)) * grid.cell_weights[ii, jj]
    out = np.empty(len(xi))
    for k, (q, r) in enumerate(zip(xi, radii)):
        sel = (px - q[0]) ** 2 + (py - q[1]) ** 2 < r * r
        out[k] = float(integ[sel].sum())
    return out


def run(config: RunConfig, core: DomainCore | None = None) -> RunResult:
    """Execute the full construction; raises PipelineError with the failing
    stage recorded (and written to the manifest when out_dir is set)."""
    config.validate()
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    stage = "setup"
    try:
        if core is None:
            core = build_core(parse_domain(config.domain), config.n, eig_tol=config.eig_tol)
        data = setup(
            core,
            h_source=config.h_source,
            s=config.s,
            lambda_threshold=config.lambda_threshold,
        )

        stage = "optimize-configuration"
        trace_rows: list | None = [] if config.trace else None
        beta = config.beta if config.beta is not None else default_beta(config.m)
        configuration = maximize_configuration(
            config.m, config.s, data, beta=beta, seed=config.seed, trace=trace_rows
        )

        stage = "assemble-ansatz"
        ansatz = assemble_ansatz(configuration, data)

        stage = "linearized-correction"
        op = build_operator(ansatz, data)
        basis = build_kernel_basis(ansatz, data)
        correction = contract(op, basis, ansatz)

        stage = "newton-refine"
        u_start = ScalarField(data.grid, ansatz.U.values + correction.psi.values)
        refined = newton_refine(
            u_start, data, tol=config.newton_tol, expected_spikes=config.m
        )
        if not refined.converged:
            raise RuntimeError(
                f"Newton did not converge (residual {refined.residual_inf:.3e} "
                f"after {refined.iterations} iterations)"
            )

        stage = "diagnostics"
        diag = _diagnostics(config, data, configuration, ansatz, correction, refined)
    except PipelineError:
        raise
    except BaseException as exc:
        if out_dir:
            _write_failure_manifest(out_dir, config, stage, exc)
        raise PipelineError(stage, exc) from exc

    manifest_path = None
    if out_dir:
        manifest_path = out_dir / "manifest.txt"
        _write_manifest(manifest_path, config, data, configuration, ansatz, correction, refined, diag)
        if config.trace and trace_rows is not None:
            with open(out_dir / "optimizer_trace.csv", "w") as fh:
                fh.write("iteration,value,step\n")
                for row in trace_rows:
                    fh.write(f"{row[0]},{row[1]!r},{row[2]!r}\n")
            with open(out_dir / "newton_trace.csv", "w") as fh:
                fh.write("iteration,residual,damping\n")
                for row in refined.trace:
                    fh.write(f"{row[0]},{row[1]!r},{row[2]!r}\n")
        if config.dump_fields:
            fields_dir = out_dir / "fields"
            fields_dir.mkdir(exist_ok=True)
            dump_field_csv(data.phi1, fields_dir / "phi1.csv")
            dump_field_csv(ansatz.U, fields_dir / "ansatz.csv")
            dump_field_csv(refined.u, fields_dir / "solution.csv")

    return RunResult(
        config=config,
        data=data,
        configuration=configuration,
        ansatz=ansatz,
        correction=correction,
        refined=refined,
        diagnostics=diag,
        manifest_path=manifest_path,
    )


def _diagnostics(config, data, configuration, ansatz, correction, refined) -> Diagnostics:
    grid = data.grid
    xi = configuration.xi
    spikes = refined.spike_nodes
    if len(spikes) >= 2:
        min_sep = min(
            float(np.hypot(*(spikes[a] - spikes[b])))
            for a in range(len(spikes))
            for b in range(a + 1, len(spikes))
        )
    else:
        min_sep = math.inf

    if len(spikes):
        sep_ref = configuration.min_separation
        radii = np.full(len(spikes), sep_ref / 3.0)
        if not np.isfinite(sep_ref):
            radii = np.array(
                [max(-float(data.domain.sdf(*p)) / 2.0, 10 * grid.h) for p in spikes]
            )
        per_spike = _per_spike_masses(refined.u, data, spikes, radii)
    else:
        per_spike = np.zeros(0)

    core_scale = float((configuration.mu * configuration.delta_j).max())
    probes = _probe_points(data, xi, core_scale)
    far_dev = far_field_check(refined.u, xi, data, probes)

    report = energy_report(ansatz, data)
    mass = mass_in3(refined.u, data)
    u1 = to_in1_solution(refined.u, data)
    massf = mass_in1(u1, data)
    final_star = star_norm(
        ScalarField(grid, grid.scatter_interior(in3_residual(refined.u, data))),
        configuration,
    )

    lam_ok = all(
        float(np.clip(
            data.phi1.values[
                int(round((p[0] - grid.xs[0]) / grid.hx)),
                int(round((p[1] - grid.ys[0]) / grid.hy)),
            ],
            0,
            None,
        ))
        > data.lambda_threshold
        for p in spikes
    ) if len(spikes) else False

    checks = {
        "newton_converged": bool(refined.converged and refined.residual_inf <= config.newton_tol),
        "spike_count_matches": len(spikes) == config.m,
        "configuration_admissible": bool(configuration.admissible),
        "spikes_inside_lambda": bool(lam_ok),
    }
    return Diagnostics(
        mass=mass,
        mass_forced_form=massf,
        per_spike_mass=per_spike,
        spike_count=len(spikes),
        spike_locations=spikes,
        min_separation=min_sep,
        far_field_deviation=far_dev,
        energy=report,
        ansatz_star_norm=ansatz.star_norm,
        final_residual_star=final_star,
        psi_inf=correction.psi_inf,
        newton_iterations=refined.iterations,
        newton_residual=refined.residual_inf,
        checks=checks,
    )


def _manifest_lines(config, data, configuration, ansatz, correction, refined, diag):
    lines = [f"#schema={MANIFEST_SCHEMA}"]

    def put(key, val):
        if isinstance(val, float):
            lines.append(f"{key}={val!r}")
        else:
            lines.append(f"{key}={val}")

    put("status", "ok")
    put("domain", config.domain)
    put("n", config.n)
    put("m", config.m)
    put("s", config.s)
    put("beta", configuration.beta)
    put("h_source", config.h_source)
    put("lambda_threshold", config.lambda_threshold)
    put("seed", config.seed)
    put("lambda1", data.lam1)
    put("grid_h", data.grid.h)
    for j in range(configuration.m):
        put(f"spike_{j}_x", float(configuration.xi[j, 0]))
        put(f"spike_{j}_y", float(configuration.xi[j, 1]))
        put(f"spike_{j}_mu", float(configuration.mu[j]))
        put(f"spike_{j}_delta", float(configuration.delta_j[j]))
        put(f"spike_{j}_gamma", float(configuration.gamma_j[j]))
    put("admissible", configuration.admissible)
    put("resolvable", ansatz.resolvable)
    for w in ansatz.warnings:
        put("warning", w)
    put("ansatz_star_norm", ansatz.star_norm)
    put("psi_inf", diag.psi_inf)
    put("contraction_iterations", correction.iterations)
    put("contraction_converged", correction.converged)
    put("contraction_diverged", correction.diverged)
    put("newton_iterations", diag.newton_iterations)
    put("newton_residual", diag.newton_residual)
    put("newton_levenberg_steps", refined.levenberg_steps)
    put("mass", diag.mass)
    put("mass_forced_form", diag.mass_forced_form)
    put("mass_over_8pim", diag.mass / (8 * math.pi * config.m))
    for k, v in enumerate(diag.per_spike_mass):
        put(f"spike_{k}_ball_mass", float(v))
    put("spike_count", diag.spike_count)
    for k, p in enumerate(diag.spike_locations):
        put(f"detected_spike_{k}_x", float(p[0]))
        put(f"detected_spike_{k}_y", float(p[1]))
    put("min_separation", diag.min_separation)
    put("far_field_deviation", diag.far_field_deviation)
    put("energy_full", diag.energy.j_full)
    put("energy_expansion", diag.energy.j_expansion)
    put("energy_interaction_term", diag.energy.interaction_term)
    put("energy_height_term", diag.energy.height_term)
    put("energy_discrepancy", diag.energy.discrepancy)
    put("final_residual_star", diag.final_residual_star)
    for k, v in diag.checks.items():
        put(f"check_{k}", v)
    put("all_checks_pass", diag.all_hard_checks_pass)
    return lines


def _write_manifest(path, config, data, configuration, ansatz, correction, refined, diag):
    lines = _manifest_lines(config, data, configuration, ansatz, correction, refined, diag)
    Path(path).write_text("\n".join(lines) + "\n")


def _write_failure_manifest(out_dir: Path, config: RunConfig, stage: str, exc: BaseException):
    lines = [
        f"#schema={MANIFEST_SCHEMA}",
        "status=failed",
        f"failed_stage={stage}",
        f"error={type(exc).__name__}: {exc}",
        f"domain={config.domain}",
        f"n={config.n}",
        f"m={config.m}",
        f"s={config.s!r}",
    ]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def thread_cap() -> int:
    env = os.environ.get("BUBBLEFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def sweep(base: RunConfig, s_values, core: DomainCore | None = None) -> list[RunResult | PipelineError]:
    """Run one entry per s concurrently; entries get per-s output
    directories under base.out_dir.  Shared immutable core across entries."""
    base.validate()
    if core is None:
        core = build_core(parse_domain(base.domain), base.n, eig_tol=base.eig_tol)

    def one(s):
        sub = None
        if base.out_dir:
            sub = str(Path(base.out_dir) / f"s_{s:g}")
        cfg = replace(base, s=float(s), out_dir=sub)
        try:
            return run(cfg, core=core)
        except PipelineError as exc:
            return exc

    workers = min(thread_cap(), len(list(s_values)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, s_values))
