"""Command-line front end: named experiments over a device config, with parameter sweeps.

Every run writes ``<out>/<command>.csv`` (one schema line, then a CSV table)
and ``<out>/<command>.meta.json`` holding the resolved config, its hash, the
seed and the tool version.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import itertools
import json
import os
import re
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__, data_path
from .device import DeviceConfigError, DimensionError, DriveSpec, read_config, topology_from_dict

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FIT = 0, 2, 3, 4

BUNDLED = {
    "device": "device_4q.yaml",
    "device_4q": "device_4q.yaml",
    "gate_pair": "gate_pair.yaml",
    "two_qubit_only": "two_qubit_only.yaml",
}


class ConfigError(ValueError):
    pass


# --- config and sweeps ----------------------------------------------------


def resolve_config_path(name: Optional[str]) -> Path:
    """A file path, or the stem of a bundled fixture (``device``, ``two-qubit-only``, ...)."""
    if name is None:
        return Path(data_path(BUNDLED["device"]))
    p = Path(name)
    if p.is_file():
        return p
    stem = re.sub(r"[-.]", "_", p.stem).lower()
    if stem in BUNDLED:
        return Path(data_path(BUNDLED[stem]))
    raise ConfigError(f"config {name!r} not found (bundled: {', '.join(sorted(BUNDLED))})")


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


_TOKEN = re.compile(r"([A-Za-z_]\w*)|\[(\d+)\]")


def _path_tokens(path: str) -> list:
    tokens = []
    for part in path.split("."):
        for m in _TOKEN.finditer(part):
            tokens.append(m.group(1) if m.group(1) is not None else int(m.group(2)))
    if not tokens:
        raise ConfigError(f"empty sweep path {path!r}")
    return tokens


def set_config_value(config: dict, path: str, value) -> None:
    """Assign ``value`` at a dotted/indexed path such as ``qubits[0].omega_ge``; the path must exist."""
    tokens = _path_tokens(path)
    node = config
    for tok in tokens[:-1]:
        try:
            node = node[tok]
        except (KeyError, IndexError, TypeError):
            raise ConfigError(f"sweep path {path!r} does not resolve in the config") from None
    last = tokens[-1]
    try:
        node[last]
    except (KeyError, IndexError, TypeError):
        raise ConfigError(f"sweep path {path!r} does not resolve in the config") from None
    node[last] = value


@dataclass(frozen=True)
class SweepSpec:
    path: str
    values: tuple[float, ...]

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        """``path=start:stop:points`` or ``path=v1,v2,...``."""
        if "=" not in text:
            raise ConfigError(f"sweep {text!r}: expected path=range")
        path, rng = (s.strip() for s in text.split("=", 1))
        try:
            if ":" in rng:
                start, stop, points = rng.split(":")
                n = int(points)
                if n < 1:
                    raise ConfigError(f"sweep {text!r}: points must be >= 1")
                values = tuple(float(x) for x in np.linspace(float(start), float(stop), n))
            else:
                values = tuple(float(x) for x in rng.split(",") if x.strip())
        except ValueError as exc:
            raise ConfigError(f"sweep {text!r}: {exc}") from exc
        if not values:
            raise ConfigError(f"sweep {text!r}: no values")
        _path_tokens(path)
        return cls(path, values)


def sweep_grid(sweeps: Sequence[SweepSpec]) -> list[dict[str, float]]:
    """Nested sweeps as a grid, first sweep outermost."""
    if not sweeps:
        return [{}]
    return [dict(zip((s.path for s in sweeps), combo)) for combo in itertools.product(*(s.values for s in sweeps))]


# --- experiments ----------------------------------------------------------


@dataclass(frozen=True)
class RunContext:
    shots: Optional[int]
    seed: int
    options: dict


def _gate(config: dict, topo) -> tuple[str, str, float]:
    g = config.get("gate") or {}
    labels = topo.labels
    control = g.get("control", "Q2" if "Q2" in labels else labels[0])
    target = g.get("target", "Q3" if "Q3" in labels else labels[1])
    for q in (control, target):
        if q not in labels:
            raise ConfigError(f"gate qubit {q!r} is not in the device")
    return control, target, float(g.get("amplitude", 18.0))


def _topology(config: dict):
    return topology_from_dict({k: config[k] for k in ("qubits", "couplers", "couplings", "truncation") if k in config})


def _neighbour(labels, q, away_from):
    i, j = labels.index(q), labels.index(away_from)
    k = i + (i - j)
    if not 0 <= k < len(labels):
        raise ConfigError(f"{q} has no neighbour on the side away from {away_from}")
    return labels[k]


def _drive(topo, control, target, amp):
    from .analytics import dressed_qubit_frequencies

    return DriveSpec(control, amp, dressed_qubit_frequencies(topo)[target])


def run_analytics(config: dict, ctx: RunContext) -> list[dict]:
    from .analytics import (
        CRRateInput,
        PoleScan,
        cr_rate_u1,
        dispersive_shift_chi,
        find_resonance_poles,
        qubit_charge_elements,
        static_zz_exact,
        zx_coefficient_from_u1,
    )

    topo = _topology(config)
    report = ctx.options.get("report", "all")
    rows = []
    if report in ("all", "nu"):
        for q in topo.qubits:
            nu01, nu12 = qubit_charge_elements(q.omega_ge, q.anharmonicity)
            rows.append({"quantity": "nu01", "subject": q.label, "value": nu01})
            rows.append({"quantity": "nu12", "subject": q.label, "value": nu12})
    labels = topo.labels
    pairs = list(zip(labels, labels[1:]))
    if report in ("all", "j"):
        for k, (a, b) in enumerate(pairs):
            rows.append({"quantity": "j_mhz", "subject": f"{a}-{b}", "value": topo.pair_coupling_mhz(k)})
    if report in ("all", "zz"):
        for a, b in pairs:
            rows.append({"quantity": "xi_zz_mhz", "subject": f"{a}-{b}", "value": static_zz_exact(topo, (a, b))})
    control, target, amp = _gate(config, topo)
    if report in ("all", "u1"):
        qc, qt = topo.qubit(control), topo.qubit(target)
        k = min(labels.index(control), labels.index(target))
        nu_c = qubit_charge_elements(qc.omega_ge, qc.anharmonicity)
        nu_t = qubit_charge_elements(qt.omega_ge, qt.anharmonicity)
        inp = CRRateInput(
            topo.pair_coupling_mhz(k), amp, (qc.omega_ge - qt.omega_ge) * 1e3, qc.anharmonicity * 1e3,
            nu_t01=nu_t[0], nu_c01=nu_c[0], nu_c12=nu_c[1],
        )
        u1 = cr_rate_u1(inp)
        rows.append({"quantity": "u1_mhz", "subject": f"{control}->{target}", "value": u1})
        rows.append({"quantity": "zx_mhz", "subject": f"{control}->{target}", "value": zx_coefficient_from_u1(u1)})
    if report in ("all", "chi"):
        for k, (a, b) in enumerate(pairs):
            qa, qb = topo.qubit(a), topo.qubit(b)
            chi = dispersive_shift_chi(topo.pair_coupling_mhz(k), qa.anharmonicity * 1e3, qb.anharmonicity * 1e3, (qa.omega_ge - qb.omega_ge) * 1e3)
            rows.append({"quantity": "chi_mhz", "subject": f"{a}-{b}", "value": chi})
    if report in ("all", "poles"):
        spectator = ctx.options.get("spectator_label") or (
            _neighbour(labels, control, target) if len(labels) > 2 else control
        )
        scan = PoleScan(spectator, target, -300.0, 200.0, 1.0)
        for p in find_resonance_poles(topo, scan, roles={spectator: "spectator", control: "control", target: "target"}):
            rows.append({"quantity": f"pole_{p.kind}", "subject": f"{p.states[0]}|{p.states[1]}", "value": p.detuning})
    if not rows:
        raise ConfigError(f"unknown report {report!r}")
    return rows


def run_rabi(config: dict, ctx: RunContext) -> list[dict]:
    from .tomography import rabi_series, rabi_times

    topo = _topology(config)
    control, target, amp = _gate(config, topo)
    drive = _drive(topo, control, target, amp)
    times = rabi_times(ctx.options.get("window", 3000.0), int(ctx.options.get("samples", 301)))
    rows = []
    for c in (0, 1):
        s = rabi_series(topo, drive, target, {control: c}, times, shots=ctx.shots, seed=ctx.seed + c)
        for i, t in enumerate(s.times):
            rows.append({"control_state": c, "time_ns": t, "x": s.x[i], "y": s.y[i], "z": s.z[i]})
    return rows


def _tomography_row(res) -> dict:
    """One wide row: every Pauli coefficient (MHz), worst fit residual and quality flags."""
    row = {k: v for k, v in res.coefficients.items()}
    row["residual"] = max((f.residual for f in res.fits.values()), default=0.0)
    row["flagged"] = int(res.flagged)
    row["flags"] = ";".join(res.flags)
    return row


def run_tomo2q(config: dict, ctx: RunContext) -> list[dict]:
    from .tomography import two_qubit_tomography

    topo = _topology(config)
    control, target, amp = _gate(config, topo)
    res = two_qubit_tomography(topo, _drive(topo, control, target, amp), control, target, shots=ctx.shots, seed=ctx.seed)
    return [_tomography_row(res)]


def _spectator_label(topo, control, target, which: str) -> str:
    labels = topo.labels
    if which == "control":
        return _neighbour(labels, control, target)
    if which == "target":
        return _neighbour(labels, target, control)
    if which in labels:
        return which
    raise ConfigError(f"unknown spectator {which!r}")


def run_tomo3q(config: dict, ctx: RunContext) -> list[dict]:
    from .tomography import three_qubit_tomography

    topo = _topology(config)
    control, target, amp = _gate(config, topo)
    spectator = _spectator_label(topo, control, target, ctx.options.get("spectator", "control"))
    keep = [q for q in topo.labels if q in (control, target, spectator)]
    sub = topo.subset(keep)
    coord = (sub.qubit(spectator).omega_ge - sub.qubit(target).omega_ge) * 1e3
    res = three_qubit_tomography(
        sub,
        _drive(sub, control, target, amp),
        control,
        target,
        spectator,
        shots=ctx.shots,
        seed=ctx.seed,
        pole_catalog=ctx.options.get("pole_catalog"),
        pole_coordinate=coord,
    )
    return [dict(delta_st_mhz=coord, **_tomography_row(res))]


def _tomo3q_catalog(config: dict, options: dict):
    from .analytics import PoleScan, find_resonance_poles

    topo = _topology(config)
    control, target, _ = _gate(config, topo)
    spectator = _spectator_label(topo, control, target, options.get("spectator", "control"))
    sub = topo.subset([q for q in topo.labels if q in (control, target, spectator)])
    roles = {spectator: "spectator", control: "control", target: "target"}
    return find_resonance_poles(sub, PoleScan(spectator, target, -300.0, 200.0, 1.0), roles=roles)


def run_phase_cal(config: dict, ctx: RunContext) -> list[dict]:
    from .tomography import drive_phase_calibration

    topo = _topology(config)
    control, target, amp = _gate(config, topo)
    cal = drive_phase_calibration(topo, _drive(topo, control, target, amp), control, target)
    return [
        {"phase_rad": p, "zx_mhz": zx, "zy_mhz": zy, "phi0_rad": cal.phi0}
        for p, zx, zy in zip(cal.phases, cal.zx, cal.zy)
    ]


def _calibrated_gate(config: dict):
    from .sequences import calibrate_echo_gate

    topo = _topology(config)
    control, target, amp = _gate(config, topo)
    return topo, calibrate_echo_gate(topo, control, target, amplitude_guess=amp)


def run_echo(config: dict, ctx: RunContext) -> list[dict]:
    from .sequences import r_vector_trace

    topo, cal = _calibrated_gate(config)
    durations = np.linspace(0.0, float(ctx.options.get("max_duration", 400.0)), int(ctx.options.get("points", 81)))
    trace, ent = r_vector_trace(topo, cal.echo, durations, target=cal.echo.target)
    return [dict(r, t_entangle_ns=ent.time, concurrence=ent.concurrence) for r in trace.rows()]


def run_zz(config: dict, ctx: RunContext) -> list[dict]:
    from .analytics import static_zz_exact
    from .sequences import ramsey_zz

    topo = _topology(config)
    labels = topo.labels
    rows = []
    for a, b in zip(labels, labels[1:]):
        r = ramsey_zz(topo, a, b)
        rows.append({"pair": f"{a}-{b}", "xi_ramsey_mhz": r.xi_zz, "xi_exact_mhz": static_zz_exact(topo, (a, b))})
    return rows


def run_qpt_cmd(config: dict, ctx: RunContext) -> list[dict]:
    from .dynamics import Delay, PulseSchedule
    from .qpt import chi_from_unitary, fidelity, ideal_gate_chi, mle_project, reconstruct_chi, run_qpt

    topo = _topology(config)
    control, target, _ = _gate(config, topo)
    mode = "dissipative" if ctx.options.get("coherence") else "unitary"
    if ctx.options.get("schedule", "gate") == "identity":
        sched = PulseSchedule((Delay(0.0),))
        from .analytics import dressed_qubit_frequencies

        frame = dressed_qubit_frequencies(topo)[target]
        ds = run_qpt(topo, sched, (control, target), ctx.shots, ctx.seed, mode=mode, frame_frequency=frame)
        lin = reconstruct_chi(ds)
        ideal = chi_from_unitary(np.eye(4))
        return [
            {
                "schedule": "identity",
                "fidelity": fidelity(mle_project(lin), ideal),
                "fidelity_linear": fidelity(lin, ideal),
                "theta_c": 0.0,
                "theta_t": 0.0,
            }
        ]
    topo, cal = _calibrated_gate(config)
    ds = run_qpt(topo, cal.echo.schedule, (control, target), ctx.shots, ctx.seed, mode=mode)
    lin = reconstruct_chi(ds)
    ideal = ideal_gate_chi(chi_exp=mle_project(lin))
    return [
        {
            "schedule": "gate",
            "fidelity": ideal.fidelity,
            "fidelity_linear": ideal_gate_chi(ideal.corrections, lin).fidelity,
            "theta_c": ideal.corrections[0],
            "theta_t": ideal.corrections[1],
        }
    ]


def run_spectator_scan(config: dict, ctx: RunContext) -> list[dict]:
    from .sequences import calibrate_echo_gate, run_spectator_study, spectator_operation_indices

    topo = _topology(config)
    control, target, amp = _gate(config, topo)
    if len(topo.labels) < 4:
        raise ConfigError("spectator-scan needs a chain with spectators on both sides of the gate pair")
    cal = calibrate_echo_gate(topo.subset([control, target]), control, target, amplitude_guess=amp)
    cs, ts = _neighbour(topo.labels, control, target), _neighbour(topo.labels, target, control)
    k_c = min(topo.labels.index(cs), topo.labels.index(control))
    k_t = min(topo.labels.index(ts), topo.labels.index(target))
    indices = spectator_operation_indices(topo, control_spectator=cs, target_spectator=ts, control_side_coupler=k_c, target_side_coupler=k_t)
    res = run_spectator_study(topo, cal, indices, shots=ctx.shots, seed=ctx.seed)
    return [
        {"index": r.index, "region": r.region, "batch": r.batch, "xi_zz_mhz": r.xi_zz, "fidelity": r.fidelity, "relative_error": r.relative_error}
        for r in res
    ]


def run_crosstalk(config: dict, ctx: RunContext) -> list[dict]:
    from .calibration import invert_response, load_response_csv, printed_correction_matrix

    path = ctx.options.get("matrix")
    corr = load_response_csv(path) if path else printed_correction_matrix()
    resp = invert_response(corr)
    back = invert_response(resp)
    err = float(np.max(np.abs(back.matrix - corr.matrix)))
    rows = []
    for i, a in enumerate(resp.labels):
        rows.append(dict({"row": a}, **{b: resp.matrix[i, j] for j, b in enumerate(resp.labels)}, round_trip_error=err))
    return rows


COMMANDS: dict[str, Callable[[dict, RunContext], list[dict]]] = {
    "analytics": run_analytics,
    "rabi": run_rabi,
    "tomo2q": run_tomo2q,
    "tomo3q": run_tomo3q,
    "phase-cal": run_phase_cal,
    "echo": run_echo,
    "zz": run_zz,
    "qpt": run_qpt_cmd,
    "spectator-scan": run_spectator_scan,
    "crosstalk": run_crosstalk,
}

NO_DEVICE = {"crosstalk"}


# --- driver ---------------------------------------------------------------


def _point(args) -> list[dict]:
    command, config, overrides, ctx = args
    cfg = copy.deepcopy(config)
    for path, value in overrides.items():
        set_config_value(cfg, path, value)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = COMMANDS[command](cfg, ctx)
    return [dict(overrides, **r) for r in rows]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_table(rows: list[dict], path: Path, schema: str) -> None:
    columns: list[str] = []
    for r in rows:
        columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    buf.write(f"# {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    path.write_text(buf.getvalue())


def _shots(text: str) -> Optional[int]:
    if text.lower() in ("inf", "infinite", "none"):
        return None
    n = int(text)
    if n <= 0:
        raise argparse.ArgumentTypeError("shots must be positive or 'inf'")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="device config path or bundled name (default: device)")
    common.add_argument("--sweep", action="append", default=[], metavar="SPEC", help="path=start:stop:points or path=v1,v2,...")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--shots", type=_shots, default=None, metavar="N|inf", help="shots per setting (default: inf)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--format", choices=["csv"], default="csv")

    parser = argparse.ArgumentParser(prog="crgate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"crgate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("analytics", parents=[common], help="J, nu, u1, chi, ZZ and poles")
    p.add_argument("--report", choices=["all", "nu", "j", "u1", "chi", "zz", "poles"], default="all")
    p = sub.add_parser("rabi", parents=[common], help="CR Rabi time series")
    p.add_argument("--window", type=float, default=3000.0, help="ns")
    p.add_argument("--samples", type=int, default=301)
    sub.add_parser("tomo2q", parents=[common], help="two-qubit Hamiltonian tomography")
    p = sub.add_parser("tomo3q", parents=[common], help="three-qubit Hamiltonian tomography")
    p.add_argument("--spectator", default="control", help="control, target or a qubit label")
    sub.add_parser("phase-cal", parents=[common], help="drive phase sweep")
    p = sub.add_parser("echo", parents=[common], help="R-vector trace of the echoed gate")
    p.add_argument("--max-duration", type=float, default=400.0, help="ns of CR drive")
    p.add_argument("--points", type=int, default=81)
    sub.add_parser("zz", parents=[common], help="Ramsey ZZ of every neighbouring pair")
    p = sub.add_parser("qpt", parents=[common], help="process tomography of the gate")
    p.add_argument("--schedule", choices=["gate", "identity"], default="gate")
    p.add_argument("--coherence", action="store_true", help="include T1/T2 from the config")
    sub.add_parser("spectator-scan", parents=[common], help="gate errors under spectator excitation")
    p = sub.add_parser("crosstalk", parents=[common], help="invert the flux correction matrix")
    p.add_argument("--matrix", help="CSV matrix (default: bundled table)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    from .calibration import ConditioningError
    from .dynamics import BranchError, DecoherenceError, StepSizeError
    from .tomography import CalibrationError, FitError

    args = build_parser().parse_args(argv)
    options = {k: v for k, v in vars(args).items() if k not in ("command", "config", "sweep", "out", "shots", "seed", "jobs", "format")}
    try:
        if args.command in NO_DEVICE:
            config = {}
        else:
            config = read_config(resolve_config_path(args.config))
            _topology(config)
        sweeps = [SweepSpec.parse(s) for s in args.sweep]
        if sweeps and args.command in NO_DEVICE:
            raise ConfigError(f"{args.command} takes no sweeps")
        grid = sweep_grid(sweeps)
        for point in grid:
            probe = copy.deepcopy(config)
            for path, value in point.items():
                set_config_value(probe, path, value)
        if args.command == "tomo3q":
            options["pole_catalog"] = _tomo3q_catalog(config, options)
        ctx = RunContext(args.shots, args.seed, options)
        work = [(args.command, config, point, ctx) for point in grid]
        t0 = time.time()
        if args.jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=min(args.jobs, len(work))) as pool:
                chunks = list(pool.map(_point, work))
        else:
            chunks = [_point(w) for w in work]
    except (ConfigError, DeviceConfigError, DimensionError) as exc:
        print(f"crgate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, CalibrationError) as exc:
        print(f"crgate: fit-quality failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (np.linalg.LinAlgError, ConditioningError, StepSizeError, BranchError, DecoherenceError, FloatingPointError, ArithmeticError) as exc:
        print(f"crgate: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    rows = [r for chunk in chunks for r in chunk]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(config)
    name = args.command
    write_table(rows, out / f"{name}.csv", f"crgate.{name} v{__version__} config_sha256={digest} seed={args.seed}")
    meta = {
        "command": name,
        "version": __version__,
        "config": config,
        "config_sha256": digest,
        "seed": args.seed,
        "shots": "inf" if args.shots is None else args.shots,
        "sweeps": [{"path": s.path, "values": list(s.values)} for s in sweeps],
        "options": {k: v for k, v in options.items() if k != "pole_catalog"},
        "rows": len(rows),
        "elapsed_s": round(time.time() - t0, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out / f"{name}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    print(f"wrote {out / (name + '.csv')} ({len(rows)} rows)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
