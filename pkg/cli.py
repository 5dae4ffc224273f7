"""
Command-line front end. Every command writes its tables into ``--out`` together
with a ``manifest.json`` and registers the run in the SQLite run registry.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence

import click
import numpy as np
import pandas as pd
from sqlalchemy.exc import SQLAlchemyError

import schemas
from database import get_db
from exceptions import ConvergenceError, OphydroError, ParameterError
from services import report_exporter
from services.autocorr_service import AutocorrService
from services.circuit_service import MIN_REALIZATIONS, CircuitService
from services.matrix_service import MatrixService, hopping
from services.run_service import RunService
from services.spectral_service import SpectralService
from services.walk_service import WalkService
from utils import parse_float_list, parse_int_list, require_probability, setup_logging

logger = logging.getLogger("ophydro.cli")


class OphydroGroup(click.Group):
    """Maps service errors onto exit codes (2 validation, 3 non-convergence)."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except OphydroError as exc:
            logger.error("❌ %s", exc.detail)
            click.echo(f"Error: {exc.detail}", err=True)
            ctx.exit(exc.exit_code)


# ───── helpers ─────


def _parse_grid(value: str) -> List[float]:
    """Either a list "1e-3,1e-2" or a log grid "lo:hi:count"."""
    if value and ":" in value:
        parts = value.split(":")
        if len(parts) != 3:
            raise ParameterError(f"log grid must read lo:hi:count, got '{value}'")
        lo, hi = float(parts[0]), float(parts[1])
        count = int(parts[2])
        if lo <= 0 or hi <= 0 or count < 1:
            raise ParameterError(f"log grid needs positive bounds and count, got '{value}'")
        return list(np.geomspace(lo, hi, count))
    return parse_float_list(value)


def _cprime(value: Optional[str]):
    if value is None:
        return None
    if value == "stochastic":
        return value
    try:
        c = float(value)
    except ValueError:
        raise ParameterError(f"--cprime must be a number or 'stochastic', got '{value}'")
    if c < 0:
        raise ParameterError(f"--cprime must be ≥ 0, got {c}")
    return c


def _finish(ctx: click.Context, out: Path, outputs: Sequence[Path], seeds: Sequence[int] = ()):
    params = {k: v for k, v in ctx.params.items() if k != "out"}
    manifest = RunService.build_manifest(ctx.command.name, params, outputs, seeds)
    RunService.write_manifest(out, manifest)
    try:
        db = next(get_db())
        try:
            RunService.record_run(db, manifest, out)
        finally:
            db.close()
    except SQLAlchemyError as exc:  # the run directory stays the record
        logger.warning("⚠ could not record run in registry: %s", exc)
    click.echo(f"{ctx.command.name}: {len(outputs)} files written to {out}")


out_option = click.option(
    "--out", type=click.Path(file_okay=False), default="runs/latest", show_default=True, help="Run directory."
)


@click.group(cls=OphydroGroup)
@click.option("--log-level", default=None, help="Overrides OPHYDRO_LOG_LEVEL.")
def cli(log_level):
    """Operator-spreading hydrodynamics: spectra, autocorrelations and oracles."""
    setup_logging(log_level)


# ───── spectrum ─────


@cli.command()
@click.option("--p", "p", type=float, required=True)
@click.option("--L", "L", type=int, required=True)
@click.option("--gamma", type=float, default=None, help="Soft dissipation rate.")
@click.option("--c", "c", type=float, default=1.0, show_default=True, help="Channel constant.")
@click.option("--ell", type=int, default=None, help="Hard truncation cutoff.")
@click.option("--cprime", type=str, default=None, help="Corner coefficient: a number or 'stochastic'.")
@out_option
@click.pass_context
def spectrum(ctx, p, L, gamma, c, ell, cprime, out):
    """Eigenvalues of T(p), P(γ)T(p) or the truncated block."""
    require_probability(p)
    if gamma is not None and (ell is not None or cprime is not None):
        raise ParameterError("--gamma cannot be combined with --ell/--cprime")
    if cprime is not None and ell is None:
        raise ParameterError("--cprime needs --ell")
    out = RunService.prepare_run_dir(out)

    analytic = None
    vector = None
    if gamma is not None:
        sym = SpectralService.dissipative_operator(p, L, gamma, c)
        numeric = SpectralService.eig_sym_tridiag(sym).eigenvalues
        _, vector = SpectralService.leading_pair(sym)
    elif ell is not None:
        if not (2 <= ell <= L):
            raise ParameterError(f"--ell must satisfy 2 ≤ ell ≤ L = {L}, got {ell}")
        corner = _cprime(cprime)
        corner = hopping(p)[2] if corner == "stochastic" else (corner or 0.0)
        block = MatrixService.build_truncated_block(p, ell, corner)
        numeric = SpectralService.eig_sym_tridiag(SpectralService.symmetrize_banded(block)).eigenvalues
        _, vector = SpectralService.leading_pair(block)
    else:
        analytic = SpectralService.analytic_spectrum(p, L).eigenvalues
        numeric = SpectralService.eig_sym_tridiag(MatrixService.build_symmetric_transfer(p, L)).eigenvalues

    table = pd.DataFrame({"index": np.arange(1, numeric.size + 1), "eigenvalue": numeric})
    if analytic is not None:
        table["analytic"] = analytic
        table["abs_error"] = np.abs(analytic - numeric)
    outputs = [report_exporter.export_to_csv(table, out / "spectrum.csv")]
    if vector is not None:
        vec = pd.DataFrame({"x": np.arange(1, vector.size + 1), "value": vector, "gauge": "original"})
        outputs.append(report_exporter.export_to_csv(vec, out / "leading_vector.csv"))
    click.echo(f"leading eigenvalue: {numeric[0]:.12f}")
    _finish(ctx, out, outputs)


# ───── autocorrelation ─────


@cli.command()
@click.option("--p", "p", type=float, required=True)
@click.option("--L", "L", type=int, required=True)
@click.option("--n", "n", type=int, default=1, show_default=True, help="Site of the autocorrelation.")
@click.option("--steps", type=int, required=True)
@click.option("--fit-window", type=str, default=None, help="t_lo,t_hi (default 10, 0.7·t_plateau).")
@click.option("--svg", is_flag=True, default=False)
@out_option
@click.pass_context
def autocorr(ctx, p, L, n, steps, fit_window, svg, out):
    """Exact ⟨n|T^t|n⟩ against the closed form, the asymptote and the plateau."""
    require_probability(p)
    if n > L or n < 1:
        raise ParameterError(f"--n must satisfy 1 ≤ n ≤ L = {L}, got {n}")
    out = RunService.prepare_run_dir(out)
    series = AutocorrService.evolve_density(MatrixService.build_transfer(p, L), n, steps)
    t = np.arange(steps + 1)
    table = pd.DataFrame({"t": t, "value": series.return_series})
    outputs = []
    pinned = p > 0.5
    if pinned:
        report = AutocorrService.plateau_report(p, n, L)
        plateau = report.plateau_value
        if n == 1:
            table["analytic_value"] = AutocorrService.spectral_return_sum(p, L, t)
            asym = np.full(t.size, np.nan)
            if steps >= 1:
                asym[1:] = AutocorrService.asymptotic_return(p, t[1:], L)
            table["asymptotic_value"] = asym
        table["plateau"] = plateau
        outputs.append(report_exporter.export_to_json(schemas.plateau_out(report), out / "plateau.json"))
        click.echo(f"plateau {plateau:.6e}, t_plateau {report.t_plateau:.2f}")
    outputs.insert(0, report_exporter.export_to_csv(table, out / "autocorr.csv"))

    window = None
    if fit_window:
        bounds = parse_int_list(fit_window)
        if len(bounds) != 2:
            raise ParameterError(f"--fit-window needs two integers, got '{fit_window}'")
        window = (bounds[0], bounds[1])
    elif pinned:
        try:
            lo, hi = AutocorrService.default_window(p, L)
            window = (lo, min(hi, steps))
        except ParameterError as exc:
            logger.warning("⚠ no default fit window: %s", exc.detail)
    if window and window[1] - window[0] > 3:
        fit = AutocorrService.fit_decay_rate(series.return_series, window, 1.5 if pinned else None)
        outputs.append(report_exporter.export_to_json(schemas.decay_fit_out(fit), out / "fit.json"))
        click.echo(f"fitted rate {fit.rate:.6f} (-ln 4p(1-p) = {-np.log(4 * p * (1 - p)):.6f})")
    else:
        logger.info("series too short for a decay fit; skipping")

    if svg:
        curves = {"exact": (t, table["value"])}
        if "asymptotic_value" in table:
            curves["asymptote"] = (t, table["asymptotic_value"])
        outputs.append(
            report_exporter.export_line_chart(
                curves, out / "autocorr.svg", f"⟨{n}|T^t|{n}⟩, p={p}, L={L}", "t", "autocorrelation",
                reference=table["plateau"].iloc[0] if "plateau" in table else None, markers=("exact",),
            )
        )
    _finish(ctx, out, outputs)


# ───── dissipative scans ─────


@cli.command("scan-gamma")
@click.option("--p", "p", type=float, required=True)
@click.option("--L-list", "L_list", type=str, required=True, help="e.g. 100,300,500")
@click.option("--gamma-grid", type=str, required=True, help="list, or lo:hi:count for a log grid")
@click.option("--c", "c", type=float, default=1.0, show_default=True)
@click.option("--svg", is_flag=True, default=False)
@out_option
@click.pass_context
def scan_gamma(ctx, p, L_list, gamma_grid, c, svg, out):
    """Leading eigenvalue of P(γ)T(p) over L and γ."""
    Ls = parse_int_list(L_list)
    gammas = _parse_grid(gamma_grid)
    if not Ls or not gammas:
        raise ParameterError("--L-list and --gamma-grid must be non-empty")
    out = RunService.prepare_run_dir(out)
    rows = SpectralService.gamma_scan(p, Ls, gammas, c)
    table = pd.DataFrame(rows)
    outputs = [report_exporter.export_to_csv(table, out / "scan_gamma.csv")]
    if svg:
        curves = {
            f"L={L}": (np.log10(grp["gamma"]), grp["leading_eigenvalue"]) for L, grp in table.groupby("L", sort=True)
        }
        outputs.append(
            report_exporter.export_line_chart(
                curves, out / "scan_gamma.svg", f"leading eigenvalue of P(γ)T(p), p={p}", "log10 γ", "λ_max",
                log_y=False, reference=4 * p * (1 - p),
            )
        )
    _finish(ctx, out, outputs)


@cli.command()
@click.option("--p", "p", type=float, required=True)
@click.option("--L", "L", type=int, required=True)
@click.option("--gamma", type=float, required=True)
@click.option("--c", "c", type=float, default=1.0, show_default=True)
@click.option("--count", type=int, default=4, show_default=True, help="Eigenvectors in the symmetric gauge.")
@out_option
@click.pass_context
def eigenstates(ctx, p, L, gamma, c, count, out):
    """Leading and subleading eigenvectors of P(γ)T̃(p), and the leading density of P(γ)T(p)."""
    out = RunService.prepare_run_dir(out)
    t = MatrixService.build_symmetric_transfer(p, L)
    w = MatrixService.build_dissipation(gamma, c, L)
    sym = SpectralService.symmetrize_dissipative(t, w)
    spectrum = SpectralService.eig_sym_tridiag(sym, eigenvectors=True)
    count = max(1, min(count, L))
    value, density = SpectralService.leading_pair(sym)

    table = pd.DataFrame({"x": np.arange(1, L + 1), "leading_density": density})
    half = np.exp(0.5 * w.log_weights)
    summary = {"eigenvalues": [], "sign_changes": []}
    for i in range(count):
        vec = half * spectrum.eigenvectors[:, i]
        vec = vec / np.abs(vec).max()
        table[f"symmetric_{i}"] = vec
        summary["eigenvalues"].append(float(spectrum.eigenvalues[i]))
        summary["sign_changes"].append(SpectralService.sign_changes(vec))
    peak = int(np.argmax(density)) + 1
    summary.update(
        leading_eigenvalue=value,
        peak_site=peak,
        peak_estimate=SpectralService.peak_estimate(value, gamma, c) if 0 < value < 1 and gamma > 0 else None,
        bulk_bound=float(np.exp(-c * gamma) * 4 * p * (1 - p)),
    )
    outputs = [
        report_exporter.export_to_csv(table, out / "eigenstates.csv"),
        report_exporter.export_to_json(summary, out / "eigenstates.json"),
    ]
    click.echo(f"leading eigenvalue {value:.9f}, peak at x={peak}")
    _finish(ctx, out, outputs)


# ───── hard truncation ─────


@cli.command()
@click.option("--p", "p", type=float, required=True)
@click.option("--ell-list", type=str, required=True, help="e.g. 50,100,200,400")
@click.option("--cprime", type=float, default=0.0, show_default=True)
@click.option("--svg", is_flag=True, default=False)
@out_option
@click.pass_context
def truncation(ctx, p, ell_list, cprime, svg, out):
    """ψ(ℓ) = ℓ²(4p(1-p) - λ_max) for the truncated block."""
    ells = parse_int_list(ell_list)
    if not ells:
        raise ParameterError("--ell-list must be non-empty")
    out = RunService.prepare_run_dir(out)
    roots = SpectralService.truncated_root_scan(p, ells, cprime)
    table = pd.DataFrame([schemas.truncation_out(r).model_dump() for r in roots])
    target = p * (1 - p) * np.pi**2
    table["psi_target"] = target
    table["above_ceiling"] = table["eigenvalue"] > 4 * p * (1 - p)
    outputs = [report_exporter.export_to_csv(table, out / "truncation.csv")]
    if svg:
        outputs.append(
            report_exporter.export_line_chart(
                {"ψ(ℓ)": (table["ell"], table["psi"])}, out / "truncation.svg", f"ψ(ℓ), p={p}", "ℓ", "ψ",
                log_y=False, reference=target, markers=("ψ(ℓ)",),
            )
        )
    _finish(ctx, out, outputs)


# ───── counterexample ─────


@cli.command()
@click.option("--p", "p", type=float, required=True)
@click.option("--epsilon-list", type=str, required=True)
@click.option("--L", "L", type=int, default=200, show_default=True)
@click.option("--gamma", type=float, default=0.1, show_default=True)
@click.option("--pinned", is_flag=True, default=False, help="Pin the second-to-last diagonal entry at 1-p.")
@click.option("--export-matrix", is_flag=True, default=False, help="Also write each matrix and its moments as JSON.")
@out_option
@click.pass_context
def counterexample(ctx, p, epsilon_list, L, gamma, pinned, export_matrix, out):
    """Walks with identical v_B and D but different dissipative leading eigenvalues."""
    eps_values = parse_float_list(epsilon_list)
    if not eps_values:
        raise ParameterError("--epsilon-list must be non-empty")
    require_probability(p)
    out = RunService.prepare_run_dir(out)
    weight = MatrixService.build_dissipation(gamma, 1.0, L)
    rows = []
    exported = []
    moment_records = []
    for i, eps in enumerate(eps_values, start=1):
        m = MatrixService.build_counterexample(p, eps, L, pinned_second_last=pinned)
        moments = MatrixService.jump_moments(m)
        value, _ = SpectralService.leading_pair(m, weight)
        if export_matrix:
            path = out / f"matrix_{i}.json"
            exported.append(report_exporter.export_to_json(schemas.BandedMatrixDescription.from_matrix(m), path))
            moment_records.append({"epsilon": eps, **schemas.JumpMomentsOut.from_domain(moments).model_dump()})
        rows.append(
            {
                "epsilon": eps,
                "v_B": moments.v_B,
                "D": moments.D,
                "third_moment": moments.higher,
                "dissipative_leading": value,
                # the leading vector sits at x=1, so P(γ) contributes exactly e^{-γ}
                "eigenvalue_limit": value * np.exp(gamma),
                "matrix_leading": float(m.band(0).max()),
            }
        )
    table = pd.DataFrame(rows)
    if np.ptp(table["v_B"]) > 1e-14 or np.ptp(table["D"]) > 1e-14:
        raise ConvergenceError("v_B or D changed with ε; the construction is broken")
    outputs = [report_exporter.export_to_csv(table, out / "counterexample.csv")]
    if export_matrix:
        outputs += exported
        outputs.append(report_exporter.export_to_json(moment_records, out / "moments.json"))
    _finish(ctx, out, outputs)


# ───── oracles ─────


@cli.command()
@click.option("--p", "p", type=float, required=True)
@click.option("--L", "L", type=int, required=True)
@click.option("--steps", type=int, required=True)
@click.option("--walkers", type=int, default=100000, show_default=True)
@click.option("--gamma", type=float, default=0.0, show_default=True)
@click.option("--c", "c", type=float, default=1.0, show_default=True)
@click.option("--start", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@out_option
@click.pass_context
def walk(ctx, p, L, steps, walkers, gamma, c, start, seed, workers, out):
    """Monte Carlo endpoint histogram against exact evolution."""
    out = RunService.prepare_run_dir(out)
    ensemble = WalkService.new_ensemble(walkers, L, start, seed, workers)
    ensemble, _, mass = WalkService.run(ensemble, p, gamma, steps, c)
    density = WalkService.ensemble_density(ensemble)
    weight = MatrixService.build_dissipation(gamma, c, L) if gamma > 0 else None
    exact = AutocorrService.evolve_density(MatrixService.build_transfer(p, L), start, steps, weight, [steps])
    table = pd.DataFrame(
        {
            "x": np.arange(1, L + 1),
            "weight": density.values,
            "stderr": density.stderr,
            "exact": exact.checkpoints[0].values,
        }
    )
    outputs = [
        report_exporter.export_to_csv(table, out / "histogram.csv"),
        report_exporter.export_to_csv(pd.DataFrame({"t": np.arange(steps + 1), "mass": mass}), out / "mass.csv"),
    ]
    if gamma == 0:
        stat, pvalue = WalkService.chi_square(ensemble, exact.checkpoints[0])
        click.echo(f"χ² = {stat:.2f}, p-value = {pvalue:.4f}")
    _finish(ctx, out, outputs, seeds=[seed])


@cli.command("ruc-compare")
@click.option("--qubits", type=int, required=True)
@click.option("--depth", type=int, required=True)
@click.option("--realizations", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--offset", type=click.IntRange(0, 1), default=0, show_default=True, help="Qubit-to-cell alignment.")
@click.option("--svg", is_flag=True, default=False)
@out_option
@click.pass_context
def ruc_compare(ctx, qubits, depth, realizations, seed, offset, svg, out):
    """Averaged endpoint profiles of Haar brickwork circuits against T(0.8)."""
    if qubits > 12:
        raise ParameterError(f"--qubits {qubits} exceeds the dense limit of 12")
    out = RunService.prepare_run_dir(out)
    profiles = CircuitService.run_realizations(qubits, depth, realizations, seed)
    rows = []
    for prof in profiles:
        for x in range(qubits):
            rows.append(
                {
                    "t": prof.t,
                    "x": x + 1,
                    "mean": prof.weights[x],
                    "stderr": prof.stderr[x],
                    "realizations": prof.realizations,
                }
            )
    outputs = [report_exporter.export_to_csv(rows, out / "profiles.csv")]
    if realizations >= MIN_REALIZATIONS and depth >= 2:
        report = CircuitService.compare_to_hydro(profiles, offset=offset)
        outputs.append(report_exporter.export_to_csv(report["rows"], out / "comparison.csv"))
        outputs.append(
            report_exporter.export_to_json({k: v for k, v in report.items() if k != "rows"}, out / "comparison.json")
        )
        click.echo(f"front velocity {report['front_velocity']:.4f} cells/step (v_B = {report['v_B']:.2f})")
        if svg:
            table = pd.DataFrame(report["rows"])
            outputs.append(
                report_exporter.export_line_chart(
                    {"circuits": (table["step"], table["front"]), "T(0.8)": (table["step"], table["hydro_front"])},
                    out / "front.svg", f"front position, {qubits} qubits", "step", "cell",
                    log_y=False, markers=("circuits",),
                )
            )
    else:
        logger.warning("⚠ hydrodynamic comparison skipped: needs ≥ %d realizations and depth ≥ 2", MIN_REALIZATIONS)
    _finish(ctx, out, outputs, seeds=[seed])


# ───── registry ─────


@cli.command()
@click.option("--command", "command_name", default=None, help="Filter by command.")
def runs(command_name):
    """List recorded runs."""
    db = next(get_db())
    try:
        records = [schemas.RunRecordOut.model_validate(r) for r in RunService.list_runs(db, command_name)]
    finally:
        db.close()
    for r in records:
        click.echo(f"{r.id:5d}  {r.created_at:%Y-%m-%d %H:%M:%S}  {r.command:<15} {r.status:<4} {r.run_dir}")


@cli.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Replay directory.")
@click.pass_context
def replay(ctx, manifest, out):
    """Re-run a recorded manifest and compare output digests."""
    recorded = RunService.load_manifest(Path(manifest))
    command = cli.get_command(ctx, recorded.command)
    if command is None:
        raise ParameterError(f"manifest names unknown command '{recorded.command}'")
    source = Path(manifest).resolve()
    run_dir = source if source.is_dir() else source.parent
    target = Path(out) if out else run_dir.with_name(run_dir.name + "-replay")
    ctx.invoke(command, **recorded.parameters, out=str(target))
    mismatched = RunService.verify_outputs(recorded, target)
    if mismatched:
        raise OphydroError(f"replay differs in {', '.join(mismatched)}", exit_code=1)
    click.echo(f"replay of {recorded.command} matches {len(recorded.outputs)} outputs")


def main():
    cli(prog_name="ophydro")


if __name__ == "__main__":
    main()
