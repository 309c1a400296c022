"""Command line surface: forward runs, extraction, inversion, self-tests.

Exit codes are a stable contract: 0 ok, 2 input validation, 3 numerical
failure, 4 reconstruction-step failure, 5 comparison over tolerance.
Module diagnostics pass through verbatim on stderr.
"""

import argparse
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .charfn import (build_bundle, check_asymptotics, emit_grid_csv,
                     forward_Q_handle, sampled_bundle,
                     sampled_handle_from_json)
from .inverse import (DEFAULT_SIGMA_MULTIPLES, InverseError, InverseInput,
                      run_inversion, run_roundtrip)
from .model import (ProblemValidationError, complex_from_json,
                    complex_to_json, load_problem, validate_problem)
from .propagator import IntegrationFailure, endpoint_data
from .rootfinder import Rectangle, RootfinderError, build_window
from .weyl import (MultiplicityMisdetectionError, WeylPoleError,
                   extract_omega, spectral_data_to_json, weyl_residues)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_ALGORITHM = 4
EXIT_COMPARISON = 5

_NUMERIC_ERRORS = (IntegrationFailure, RootfinderError, WeylPoleError,
                   MultiplicityMisdetectionError)


class CliInputError(Exception):
    """Bad file, flag, or config value; maps to exit code 2."""


@dataclass
class RunConfig:
    """Validated knob set shared by the subcommands."""

    command: str
    problem_path: str | None = None
    window: tuple[float, float] = (6.0, 2.0)
    tolerances: dict = field(default_factory=lambda: {
        "integration": 1e-10, "rootfind": 1e-11,
        "contour": 1e-7, "compare": 1e-6})
    output_path: str | None = None
    emit_csv: bool = False
    emit_samples: bool = False
    grid: tuple[int, int] = (80, 40)
    jobs: int = 1
    seed: int = 0
    count: int = 6
    sigma_schedule: list | None = None
    bundle_paths: tuple[str, str] | None = None
    omega_path: str | None = None
    roundtrip_path: str | None = None
    half_plane: str = "upper"
    delta: float = 0.3

    def __post_init__(self):
        R, H = self.window
        if not (R > 0 and H > 0):
            raise CliInputError(f"window extents must be positive, got "
                                f"{R} {H}")
        for name, tol in self.tolerances.items():
            if not tol > 0:
                raise CliInputError(f"tolerance {name} must be positive, "
                                    f"got {tol}")
        if self.jobs < 1:
            raise CliInputError("--jobs must be at least 1")
        if self.grid[0] < 2 or self.grid[1] < 2:
            raise CliInputError("--grid needs at least 2x2 nodes")


def _parse_grid(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise CliInputError(f"--grid expects NXxNY, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _load_problem_checked(path: str):
    try:
        problem = load_problem(path)
    except FileNotFoundError:
        raise CliInputError(f"problem file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliInputError(f"malformed JSON in {path}: {exc}")
    except KeyError as exc:
        raise CliInputError(f"{path}: missing key {exc}")
    except (TypeError, ValueError) as exc:
        raise CliInputError(f"{path}: invalid problem: {exc}")
    report = validate_problem(problem)
    if report:
        raise CliInputError(f"{path}: " + "; ".join(report))
    return problem


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliInputError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliInputError(f"malformed JSON in {path}: {exc}")


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _stem(cfg: RunConfig) -> Path:
    if cfg.output_path:
        p = Path(cfg.output_path)
        return p.with_suffix("") if p.suffix == ".json" else p
    src = cfg.problem_path or cfg.roundtrip_path or "run"
    return Path(src).with_suffix("")


def _rect(cfg: RunConfig) -> Rectangle:
    R, H = cfg.window
    return Rectangle(-R, R, -H, H)


# ---------------------------------------------------------------------------
# forward / extract
# ---------------------------------------------------------------------------

def _forward_window(cfg: RunConfig, problem):
    bundle = build_bundle(problem, rtol=cfg.tolerances["integration"])
    window = build_window(bundle, R=cfg.window[0], H=cfg.window[1],
                          tol=cfg.tolerances["rootfind"])
    return bundle, window


def cmd_forward(cfg: RunConfig) -> int:
    problem = _load_problem_checked(cfg.problem_path)
    bundle, window = _forward_window(cfg, problem)
    out = _stem(cfg).with_suffix(".spectrum.json")
    _write_json(out, {"problem": problem.to_json(),
                      "spectrum": window.to_json()})
    print(f"wrote {out} ({len(window.I)} distinct eigenvalues, "
          f"{len(window.entries)} indexed)")
    if cfg.emit_csv:
        csv_path = _stem(cfg).with_suffix(".grid.csv")
        nx, ny = cfg.grid
        emit_grid_csv(problem, csv_path, (-cfg.window[0], cfg.window[0]),
                      (-cfg.window[1], cfg.window[1]), nx, ny, jobs=cfg.jobs)
        print(f"wrote {csv_path} ({nx}x{ny} grid)")
    return EXIT_OK


def _axis_samples(handle, sigmas):
    pts = np.array([1j * s for s in sigmas]
                   + [-1j * s for s in sigmas], dtype=complex)
    vals = handle.values(pts)
    n = len(sigmas)
    return [{"sigma": float(s),
             "plus": complex_to_json(vals[i]),
             "minus": complex_to_json(vals[n + i])}
            for i, s in enumerate(sigmas)]


def _emit_sample_files(cfg: RunConfig, problem, bundle, stem: Path) -> list:
    """Sample grids dense enough for the local-fit evaluator, plus the
    imaginary-axis ladder that step 2 needs (ratios of raw samples; the
    fits themselves cannot span the axis growth)."""
    R, H = cfg.window
    pad = 0.5
    step = 0.15
    res = np.arange(-R - pad, R + pad + step / 2, step)
    ims = np.arange(-H - pad, H + pad + step / 2, step)
    grid = np.array([complex(r, i) for i in ims for r in res])
    sigmas = [m / problem.T for m in DEFAULT_SIGMA_MULTIPLES]
    written = []
    for name in ("d", "a"):
        handle = getattr(bundle, name)
        vals = handle.values(grid)
        payload = {
            "function": name,
            "samples": [{"rho": complex_to_json(z), "value": complex_to_json(v)}
                        for z, v in zip(grid, vals)],
            "axis_samples": _axis_samples(handle, sigmas),
        }
        path = stem.with_suffix(f".{name}.samples.json")
        _write_json(path, payload)
        written.append(path)
    return written


def cmd_extract(cfg: RunConfig) -> int:
    problem = _load_problem_checked(cfg.problem_path)
    bundle, window = _forward_window(cfg, problem)
    omega = extract_omega(bundle, window)
    weyl = weyl_residues(bundle, window)

    stem = _stem(cfg)
    spectral = stem.with_suffix(".spectral.json")
    _write_json(spectral, spectral_data_to_json(window, weyl, omega))
    omega_path = stem.with_suffix(".omega.json")
    _write_json(omega_path, {
        "alpha": complex_to_json(problem.alpha),
        "beta": complex_to_json(problem.beta),
        "gammas": [complex_to_json(j.gamma) for j in problem.jumps],
        "window": _rect(cfg).to_json(),
        "omega": spectral_data_to_json(window, weyl, omega)["omega"],
    })
    print(f"wrote {spectral} and {omega_path}")

    flagged = [n for n, d in weyl.diagnostics.items()
               if d.get("delta") is not None
               and d["delta"] > cfg.tolerances["contour"]]
    if flagged:
        print(f"warning: recurrence/contour disagreement above "
              f"{cfg.tolerances['contour']:g} at leaders {sorted(flagged)}",
              file=sys.stderr)

    if cfg.emit_samples:
        for path in _emit_sample_files(cfg, problem, bundle, stem):
            print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# invert
# ---------------------------------------------------------------------------

def _gate_comparison(report, tol: float) -> int:
    rows = sorted(report.comparison.items(), key=lambda kv: -kv[1])
    for name, delta in rows:
        verdict = "ok" if delta <= tol else "FAIL"
        print(f"  {name:<12s} {delta:.3e}  {verdict}")
    worst = rows[0]
    if worst[1] > tol:
        print(f"comparison failed: {worst[0]} delta {worst[1]:.3e} "
              f"exceeds {tol:g}")
        return EXIT_COMPARISON
    return EXIT_OK


def cmd_invert(cfg: RunConfig) -> int:
    if cfg.roundtrip_path:
        problem = _load_problem_checked(cfg.roundtrip_path)
        config = {"sigma_schedule": cfg.sigma_schedule}
        try:
            report = run_roundtrip(problem, cfg.window, config)
        except InverseError as exc:
            _write_partial(cfg, exc)
            print(f"reconstruction failed: {exc}", file=sys.stderr)
            return EXIT_ALGORITHM
        out = _stem(cfg).with_suffix(".report.json")
        _write_json(out, report.to_json())
        print(f"wrote {out}")
        return _gate_comparison(report, cfg.tolerances["compare"])

    # data mode: sampled handles plus the Omega file, no oracle problem
    d_path, a_path = cfg.bundle_paths
    d_handle = sampled_handle_from_json(_load_json(d_path), "d")
    a_payload = _load_json(a_path)
    a_handle = sampled_handle_from_json(a_payload, "a")
    om = _load_json(cfg.omega_path)
    try:
        alpha = complex_from_json(om["alpha"])
        beta = complex_from_json(om["beta"])
        gammas = tuple(complex_from_json(g) for g in om.get("gammas", []))
        rect = Rectangle(*om["window"])
        omega_n = {int(o["n"]): int(o["omega_n"]) for o in om["omega"]}
        omega_n_nu = {int(o["n"]): [complex_from_json(v)
                                    for v in o.get("omega_n_nu", [])]
                      for o in om["omega"] if int(o["omega_n"]) == 0}
    except KeyError as exc:
        raise CliInputError(f"{cfg.omega_path}: missing key {exc}")

    bundle = sampled_bundle(a_handle, d_handle, alpha, beta)
    inp = InverseInput(bundle=bundle, omega_n=omega_n,
                       omega_n_nu={n: v for n, v in omega_n_nu.items() if v},
                       alpha=alpha, beta=beta, gammas=gammas, window=rect)
    ratios = _ratios_from_files(_load_json(d_path), a_payload)
    try:
        report = run_inversion(inp, axis_ratios=ratios,
                               skip_h_prime=ratios is None)
    except InverseError as exc:
        _write_partial(cfg, exc)
        print(f"reconstruction failed: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM
    out = _stem(cfg).with_suffix(".report.json")
    _write_json(out, report.to_json())
    print(f"wrote {out} (data mode, no comparison block)")
    return EXIT_OK


def _ratios_from_files(d_payload, a_payload):
    """a/(sigma d) rungs from matching axis sections, None when absent."""
    d_axis = {round(s["sigma"], 12): s for s in d_payload.get("axis_samples", [])}
    a_axis = {round(s["sigma"], 12): s for s in a_payload.get("axis_samples", [])}
    common = sorted(set(d_axis) & set(a_axis))
    if len(common) < 3:
        return None
    sigmas, rp, rm = [], [], []
    for s in common:
        dv_p = complex_from_json(d_axis[s]["plus"])
        dv_m = complex_from_json(d_axis[s]["minus"])
        av_p = complex_from_json(a_axis[s]["plus"])
        av_m = complex_from_json(a_axis[s]["minus"])
        if dv_p == 0 or dv_m == 0:
            continue
        sigmas.append(float(s))
        rp.append(av_p / (s * dv_p))
        rm.append(av_m / (s * dv_m))
    return (sigmas, rp, rm) if len(sigmas) >= 3 else None


def _write_partial(cfg: RunConfig, exc: InverseError) -> None:
    report = getattr(exc, "report", None)
    if report is None:
        return
    out = _stem(cfg).with_suffix(".report.json")
    payload = report.to_json()
    payload["error"] = str(exc)
    _write_json(out, payload)
    print(f"wrote partial report to {out}", file=sys.stderr)


# ---------------------------------------------------------------------------
# selftest / asymptotics
# ---------------------------------------------------------------------------

def _random_problem(rng):
    from .model import (IntervalPotentials, JumpData, PencilProblem,
                        PotentialSpec)

    def cpx(lo, hi, im=0.3):
        return complex(rng.uniform(lo, hi), rng.uniform(-im, im))

    T = float(rng.uniform(2.5, 3.8))
    b = float(rng.uniform(0.35, 0.65) * T)
    poly = lambda: PotentialSpec.polynomial(
        [cpx(-0.4, 0.4), cpx(-0.3, 0.3)])
    return PencilProblem(
        T=T, breakpoints=(b,),
        intervals=(IntervalPotentials(p=poly(), q=poly()),
                   IntervalPotentials(p=poly(), q=poly())),
        h_prime=cpx(-0.25, 0.25, 0.25), h=cpx(-0.5, 0.5, 0.5),
        alpha=cpx(0.6, 1.6, 0.3), beta=cpx(0.6, 1.6, 0.3),
        jumps=(JumpData(gamma=cpx(0.7, 1.5, 0.2),
                        eta_prime=cpx(-0.15, 0.15, 0.15),
                        eta=cpx(-0.2, 0.2, 0.2)),))


def cmd_selftest(cfg: RunConfig) -> int:
    """Randomized invariants; --seed replays a failing run exactly."""
    from .inverse import branch_sqrt

    rng = np.random.default_rng(cfg.seed)
    failures = []

    # omega classification must invert the branch root
    qs = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    bad = 0
    for q in map(complex, qs):
        if abs(q) < 1e-6:
            continue
        ang = math.atan2(q.imag, q.real)
        omega = 1 if (ang if ang >= 0 else ang + 2 * math.pi) < math.pi else -1
        if abs(omega * branch_sqrt(q * q) - q) > 1e-10 * abs(q):
            bad += 1
    if bad:
        failures.append(f"reclassification: {bad}/200 samples off")
    print(f"ok reclassification (200 samples)" if not bad
          else f"FAIL reclassification ({bad} samples)")

    for k in range(cfg.count):
        problem = _random_problem(rng)
        rho = (rng.uniform(0.5, 6.0, 6)
               + 1j * rng.uniform(-0.8, 0.8, 6)).astype(complex)
        ed = endpoint_data(problem, rho)
        C, Cp, S, Sp = ed.C[0], ed.Cp[0], ed.S[0], ed.Sp[0]

        wron = np.max(np.abs(C * Sp - Cp * S - 1.0))
        if wron > 1e-9:
            failures.append(f"problem {k}: wronskian off by {wron:.2e}")

        bundle = build_bundle(problem)
        al, be = problem.alpha, problem.beta
        c = 1j * rho * problem.h_prime + problem.h
        D = bundle.a.values(rho) + (1.0 + al * be)
        Q = forward_Q_handle(problem).values(rho)
        d = bundle.d.values(rho)
        d1_direct = bundle.d1.values(rho)
        d1_composed = (D + Q) / (2.0 * al) - c * d
        comp = np.max(np.abs(d1_direct - d1_composed)
                      / (1.0 + np.abs(d1_direct)))
        if comp > 1e-8:
            failures.append(f"problem {k}: d1 composition off by {comp:.2e}")

        phi_p = Cp + c * Sp
        lhs = Q * Q
        rhs = D * D - 4.0 * al * be * (1.0 + phi_p * d)
        eq = np.max(np.abs(lhs - rhs) / (1.0 + np.abs(lhs)))
        if eq > 1e-8:
            failures.append(f"problem {k}: Q^2 identity off by {eq:.2e}")
        print(f"ok problem {k} (wronskian {wron:.1e}, d1 {comp:.1e}, "
              f"Q^2 {eq:.1e})")

    if failures:
        for line in failures:
            print(f"FAIL {line}", file=sys.stderr)
        return EXIT_COMPARISON
    print(f"selftest passed (seed {cfg.seed}, {cfg.count} problems)")
    return EXIT_OK


def cmd_asymptotics(cfg: RunConfig) -> int:
    problem = _load_problem_checked(cfg.problem_path)
    report = check_asymptotics(problem, half_plane=cfg.half_plane,
                               delta=cfg.delta,
                               rtol=cfg.tolerances["integration"])
    out = _stem(cfg).with_suffix(".asym.json")
    _write_json(out, report.to_json())
    slopes = ", ".join(f"{k}: {v:+.3f}" for k, v in report.slopes.items())
    print(f"wrote {out}; decay slopes {slopes}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pencilspec",
        description="spectral computations for quadratic pencils with "
                    "interior jumps")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, problem=True):
        if problem:
            p.add_argument("--problem", help="problem JSON file")
        p.add_argument("--window", nargs=2, type=float, default=[6.0, 2.0],
                       metavar=("R", "H"),
                       help="half-extents of the search rectangle")
        p.add_argument("--output", help="output path or stem")
        p.add_argument("--tol-integration", type=float, default=1e-10)
        p.add_argument("--tol-rootfind", type=float, default=1e-11)
        p.add_argument("--tol-contour", type=float, default=1e-7)
        p.add_argument("--tol-compare", type=float, default=1e-6)

    p = sub.add_parser("forward", help="spectrum and char-fn grids")
    common(p)
    p.add_argument("--grid", default="80x40", help="CSV mesh, NXxNY")
    p.add_argument("--emit-csv", action="store_true")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("extract", help="spectral data and Omega files")
    common(p)
    p.add_argument("--emit-samples", action="store_true",
                   help="also write d/a sample files for data-mode invert")

    p = sub.add_parser("invert", help="reconstruction, round-trip or data")
    common(p, problem=False)
    p.add_argument("--roundtrip", metavar="PROBLEM",
                   help="forward-oracle round trip on this problem file")
    p.add_argument("--bundle", nargs=2, metavar=("D", "A"),
                   help="sampled d and a files (data mode)")
    p.add_argument("--omega", help="Omega file (data mode)")
    p.add_argument("--sigma", nargs="+", type=float,
                   help="explicit sigma schedule for step 2")

    p = sub.add_parser("selftest", help="randomized invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=6)

    p = sub.add_parser("asymptotics", help="large-|rho| deviation report")
    common(p)
    p.add_argument("--half-plane", choices=("upper", "lower"),
                   default="upper")
    p.add_argument("--delta", type=float, default=0.3,
                   help="sector inset angle")
    return ap


def _config_from(args) -> RunConfig:
    tol = {"integration": getattr(args, "tol_integration", 1e-10),
           "rootfind": getattr(args, "tol_rootfind", 1e-11),
           "contour": getattr(args, "tol_contour", 1e-7),
           "compare": getattr(args, "tol_compare", 1e-6)}
    cfg = RunConfig(
        command=args.command,
        problem_path=getattr(args, "problem", None),
        window=tuple(getattr(args, "window", [6.0, 2.0])),
        tolerances=tol,
        output_path=getattr(args, "output", None),
        emit_csv=getattr(args, "emit_csv", False),
        emit_samples=getattr(args, "emit_samples", False),
        grid=_parse_grid(getattr(args, "grid", "80x40")),
        jobs=getattr(args, "jobs", 1),
        seed=getattr(args, "seed", 0),
        count=getattr(args, "count", 6),
        sigma_schedule=getattr(args, "sigma", None),
        bundle_paths=(tuple(args.bundle)
                      if getattr(args, "bundle", None) else None),
        omega_path=getattr(args, "omega", None),
        roundtrip_path=getattr(args, "roundtrip", None),
        half_plane=getattr(args, "half_plane", "upper"),
        delta=getattr(args, "delta", 0.3),
    )
    if cfg.command in ("forward", "extract", "asymptotics") \
            and not cfg.problem_path:
        raise CliInputError(f"{cfg.command} needs --problem")
    if cfg.command == "invert":
        if cfg.roundtrip_path and cfg.bundle_paths:
            raise CliInputError("--roundtrip and --bundle are exclusive")
        if not cfg.roundtrip_path and not (cfg.bundle_paths
                                           and cfg.omega_path):
            raise CliInputError(
                "invert needs --roundtrip PROBLEM or --bundle D A with "
                "--omega FILE")
    return cfg


_HANDLERS = {
    "forward": cmd_forward,
    "extract": cmd_extract,
    "invert": cmd_invert,
    "selftest": cmd_selftest,
    "asymptotics": cmd_asymptotics,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from(args)
        return _HANDLERS[cfg.command](cfg)
    except CliInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ProblemValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InverseError as exc:
        print(f"reconstruction failure: {exc}", file=sys.stderr)
        return EXIT_ALGORITHM


if __name__ == "__main__":
    sys.exit(main())
