"""Command-line interface: ``gustrom <command> [--config FILE] [--out DIR]``.

Exit status is 0 on success; failures print ``error [<category>]: ...`` to
stderr and exit with the category's code (see :data:`EXIT_CODES`).
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .aerofoil import build_aerofoil_model, flutter_trace
from .config import default_config, load_config
from .exceptions import ContractError, GustromError
from .gust import write_table, von_karman_realization
from .model import find_equilibrium
from .nmor import load_rom, read_build_seconds, save_rom
from .sim import extract_metrics, integrate, simulation_duration
from .sweep import benchmark, prepare_rom, run_search

EXIT_CODES = {
    "error": 1,
    "contract": 2,
    "config": 3,
    "io": 4,
    "numerical": 5,
    "solver": 6,
    "reduction": 7,
    "consistency": 8,
    "divergence": 9,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file "
                        "(default: built-in aerofoil configuration)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--workers", type=int, help="concurrent sweep workers")
    common.add_argument("--rom", help="serialized ROM to load")
    common.add_argument("--validate-top", type=int, dest="validate_top",
                        help="number of leading sites confirmed at full order")
    common.add_argument("--seed", type=int, help="turbulence seed (unsigned)")

    p = argparse.ArgumentParser(prog="gustrom", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("trim", parents=[common], help="equilibrium of the model")
    sub.add_parser("flutter", parents=[common], help="linear flutter boundary")
    sub.add_parser("build-rom", parents=[common], help="build and save a ROM")
    sim = sub.add_parser("simulate", parents=[common],
                         help="one gust response, full order and ROM")
    sim.add_argument("--channels", default="xi,alpha,delta",
                     help="comma-separated channels to export")
    sw = sub.add_parser("sweep", parents=[common], help="worst-case gust search")
    sw.add_argument("--histories", type=int, default=0,
                    help="write ROM histories for this many leading sites")
    sub.add_parser("bench", parents=[common], help="speedup measurement")
    sub.add_parser("gust-preview", parents=[common],
                   help="write the configured gust signal")
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.validate_top is not None:
        cfg = replace(cfg, sweep=replace(cfg.sweep,
                                         validate_top_k=args.validate_top))
    if args.workers is not None:
        if args.workers < 1:
            raise ContractError("--workers must be positive")
        cfg = replace(cfg, workers=args.workers)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ContractError("--seed must be an unsigned 64-bit integer")
    return cfg


def _rom_for(args, cfg, model):
    if args.rom:
        return load_rom(args.rom), read_build_seconds(args.rom)
    rom, secs = prepare_rom(model, cfg.sweep)
    return rom, secs


def cmd_trim(args, cfg, out: Path) -> str:
    model = build_aerofoil_model(cfg.params)
    eq = find_equilibrium(model)
    with open(out / "trim.csv", "w") as fh:
        fh.write("channel,value\n")
        for lab, v in zip(model.descriptor.state_labels, eq.w0):
            fh.write(f"{lab},{v!r}\n")
    return (f"converged: {eq.converged}\nresidual norm: {eq.residual_norm:.3e}"
            f"\niterations: {eq.iterations}\n")


def cmd_flutter(args, cfg, out: Path) -> str:
    tr = flutter_trace(cfg.params, cfg.flutter.grid())
    write_table(out / "flutter.csv", ("U_star", "max_real"),
                np.column_stack([tr.u_star, tr.max_real]))
    if tr.has_flutter:
        return f"status: flutter\nU_L* = {float(tr.flutter_speed)!r}\n"
    return "status: no flutter in range\n"


def cmd_build_rom(args, cfg, out: Path) -> str:
    model = build_aerofoil_model(cfg.params)
    rom, secs = prepare_rom(model, cfg.sweep)
    digest = save_rom(rom, out / "rom.bin", build_seconds=secs)
    lines = [f"ROM: m={rom.m}, order={rom.order}", f"sha256: {digest}",
             f"build time: {secs:.3f} s", "modes:"]
    for info in rom.basis.selection_report:
        lines.append(f"  {info.eigenvalue:.6g}  {info.tag}: {info.reason}")
    if rom.basis.skipped:
        lines.append("skipped repeated eigenvalues: "
                     + ", ".join(f"{v:.6g}" for v in rom.basis.skipped))
    return "\n".join(lines) + "\n"


def _single_gust(args, cfg):
    if cfg.gust.kind == "von_karman":
        return von_karman_realization(cfg.turbulence(args.seed))
    return cfg.discrete_gust()


def cmd_simulate(args, cfg, out: Path) -> str:
    model = build_aerofoil_model(cfg.params)
    rom, _ = _rom_for(args, cfg, model)
    gust = _single_gust(args, cfg)
    spec = cfg.sweep
    duration = simulation_duration(gust, spec.decay_factor, spec.min_margin)
    channels = [c.strip() for c in args.channels.split(",") if c.strip()]
    fom_h = integrate(model, gust, spec.step, duration, initial=rom.base_point)
    rom_h = integrate(rom, gust, spec.step, duration)
    fom_h.to_table(out / "history_fom.csv", channels)
    rom_h.to_table(out / "history_rom.csv", channels)
    fm, rm = extract_metrics(fom_h, channels), extract_metrics(rom_h, channels)
    lines = [f"gust: {fom_h.gust_id}",
             f"FOM wall-clock {fom_h.wall_clock:.3f} s, ROM "
             f"{rom_h.wall_clock:.3f} s"]
    for c in channels:
        f, r = fm.peak(c), rm.peak(c)
        err = abs(r - f) / f if f else float("nan")
        lines.append(f"peak |{c}|: FOM {f!r}, ROM {r!r}, relative error {err:.3e}")
    return "\n".join(lines) + "\n"


def cmd_sweep(args, cfg, out: Path) -> str:
    model = build_aerofoil_model(cfg.params)
    if args.rom:
        rom = load_rom(args.rom)
        build = read_build_seconds(args.rom) or 0.0
        result = run_search(model, cfg.sweep, rom=rom, workers=cfg.workers,
                            rom_build_time=build)
    else:
        result = run_search(model, cfg.sweep, workers=cfg.workers)
    result.write_csv(out / "sweep.csv")
    result.write_validation_csv(out / "validation.csv")
    text = result.summary()
    (out / "summary.txt").write_text(text)
    if args.histories > 0:
        from .sweep import ranked_sites
        rom = load_rom(args.rom) if args.rom else prepare_rom(model, cfg.sweep)[0]
        rom = rom.with_order(cfg.sweep.rom_order)
        H = cfg.sweep.grid()
        for i in ranked_sites(result.metric_values, H)[:args.histories]:
            g = cfg.sweep.gust(H[i])
            h = integrate(rom, g, cfg.sweep.step, cfg.sweep.duration(g))
            h.to_table(out / f"history_{i}.csv", model.descriptor.state_labels[:3])
    return text


def cmd_bench(args, cfg, out: Path) -> str:
    model = build_aerofoil_model(cfg.params)
    report = benchmark(model, cfg.sweep, fom_runs=cfg.fom_runs)
    text = report.text()
    (out / "bench.txt").write_text(text)
    return text


def cmd_gust_preview(args, cfg, out: Path) -> str:
    gust = _single_gust(args, cfg)
    if cfg.gust.kind == "von_karman":
        signal = gust
    else:
        from .gust import GustSignal
        t = np.linspace(gust.t0, gust.t_end, 201)
        signal = GustSignal(t, np.asarray(gust(t), dtype=float))
    signal.to_table(out / "gust.csv")
    return f"wrote {signal.times.size} samples to {out / 'gust.csv'}\n"


COMMANDS = {
    "trim": cmd_trim,
    "flutter": cmd_flutter,
    "build-rom": cmd_build_rom,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "gust-preview": cmd_gust_preview,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        t = time.perf_counter()
        text = COMMANDS[args.command](args, cfg, out)
    except GustromError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    sys.stdout.write(text)
    sys.stdout.write(f"({args.command} finished in {time.perf_counter() - t:.2f} s)\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
