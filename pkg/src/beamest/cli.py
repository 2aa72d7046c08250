"""Command-line front end.

Experiments are declared in flat ``key = value`` config files (see the shipped
presets under ``beamest/presets``) and dispatched through four subcommands:

* ``codebook`` -- export pattern matrix, per-stage beam banks and a
  gain-flatness report for inspection;
* ``sweep``    -- Monte Carlo sweep over a pilot-energy grid (or, with
  ``outputs = slots``, the measurement slot-count table);
* ``bound``    -- analytical failure-probability upper bound across the grid;
* ``trace``    -- per-trial estimation traces as JSON lines.

Every run writes a ``<command>_manifest.json`` echoing the resolved config,
the seed and every emitted file.  Data tables are comma-separated with a
header row; complex values serialize as ``re<+/->imj``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .codebook import IndexRange, partition_subranges, write_beam_matrix
from .estimator import (
    ALPHA_FINAL,
    ALPHA_MMSE_ALL,
    NON_OVERLAPPED,
    OVERLAPPED,
    VARIANTS,
    EstimatorConfig,
    codebook_bank,
    run_estimation,
    slot_count,
    stage_count,
    trace_record,
    write_trace_records,
)
from .montecarlo import (
    ExperimentConfig,
    bound_csv,
    bound_table,
    noise_stream,
    power_for_energy,
    run_sweep,
    sample_channel,
)

__all__ = ["ConfigError", "load_config", "main"]


class ConfigError(ValueError):
    """Unreadable, malformed or incomplete experiment configuration."""


# Every key any command understands; unknown keys are rejected loudly so
# typos do not silently fall back to defaults.
KNOWN_KEYS = {
    "n", "k", "trials", "seed", "variants", "outputs", "n0", "var_alpha",
    "et_db", "et_db_min", "et_db_max", "et_db_step", "bound", "variant",
    "k_values",
}


def _parse_scalar(token: str):
    lowered = token.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered == "auto":
        return "auto"
    for cast in (int, float):
        try:
            return cast(token)
        except ValueError:
            continue
    return token


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment, commas make lists."""
    cfg: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KNOWN_KEYS and not key.startswith("n_values_k"):
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in cfg:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        tokens = [t.strip() for t in value.split(",") if t.strip()]
        if not tokens:
            raise ConfigError(f"line {lineno}: key {key!r} has no value")
        parsed = [_parse_scalar(t) for t in tokens]
        cfg[key] = parsed[0] if len(parsed) == 1 else parsed
    return cfg


def read_config_text(spec: str) -> tuple[str, str]:
    """Resolve a config path or shipped preset name to its text."""
    path = Path(spec)
    if path.is_file():
        try:
            return str(path), path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {spec!r}: {exc}") from exc
    preset = resources.files("beamest").joinpath("presets", f"{spec}.cfg")
    try:
        if preset.is_file():
            return f"preset:{spec}", preset.read_text(encoding="utf-8")
    except OSError:
        pass
    raise ConfigError(f"config {spec!r} is neither a readable file nor a shipped preset")


def load_config(spec: str) -> tuple[str, dict]:
    name, text = read_config_text(spec)
    return name, parse_config(text)


def _require(cfg: dict, key: str, kind, command: str):
    if key not in cfg:
        raise ConfigError(f"{command}: config key {key!r} is required")
    value = cfg[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        names = "/".join(k.__name__ for k in (kind if isinstance(kind, tuple) else (kind,)))
        raise ConfigError(f"{command}: key {key!r} must be {names}, got {value!r}")
    return value


def _as_list(value) -> list:
    return list(value) if isinstance(value, list) else [value]


def _energy_grid(cfg: dict, command: str) -> tuple[float, ...]:
    if "et_db" in cfg:
        return tuple(float(x) for x in _as_list(cfg["et_db"]))
    for key in ("et_db_min", "et_db_max", "et_db_step"):
        if key not in cfg:
            raise ConfigError(f"{command}: need either 'et_db' or "
                              "'et_db_min/et_db_max/et_db_step'")
    lo, hi, step = (float(cfg[k]) for k in ("et_db_min", "et_db_max", "et_db_step"))
    if step <= 0 or hi < lo:
        raise ConfigError(f"{command}: bad energy grid ({lo}, {hi}, {step})")
    count = int((hi - lo) / step + 1e-9) + 1
    return tuple(lo + i * step for i in range(count))


def _alpha_variance(cfg: dict) -> float | None:
    value = cfg.get("var_alpha", "auto")
    if value == "auto":
        return None
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"var_alpha must be a number or 'auto', got {value!r}")
    return float(value)


def _variants(cfg: dict) -> tuple[str, ...]:
    names = tuple(_as_list(cfg.get("variants", list(VARIANTS))))
    for name in names:
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; expected subset of {VARIANTS}")
    return names


def _write(path: Path, text: str, quiet: bool) -> Path:
    path.write_text(text, encoding="ascii")
    if not quiet:
        print(f"wrote {path}")
    return path


def _write_manifest(out_dir: Path, command: str, config_name: str, cfg: dict,
                    args, elapsed: float, outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "config_source": config_name,
        "config": cfg,
        "seed_override": args.seed,
        "workers": args.workers,
        "version": __version__,
        "elapsed_seconds": elapsed,
        "outputs": [p.name for p in outputs],
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="ascii")
    if not args.quiet:
        print(f"wrote {path}")
    return path


def _gain_flatness_rows(n: int, k: int, variant: str) -> list[str]:
    """Realized-gain audit along the leftmost refinement path.

    For each stage and beam: worst deviation of |u_i^H f| from gain * amplitude
    inside the covered sub-ranges, and worst leakage outside them.
    """
    bank = codebook_bank(n, k, variant)
    grid = bank.grid
    patterns = bank.patterns
    rows = ["stage,beam,gain,gain_spread,residual,max_in_range_error,max_out_of_range_gain"]
    parent = IndexRange(0, n)
    for s in range(1, stage_count(n, k) + 1):
        partition = partition_subranges(parent, parent, k, stage=s)
        cb = bank.stage_codebook(partition)
        realized = np.abs(grid.response_matrix.conj().T @ cb.f)
        covered = np.zeros(n, dtype=bool)
        target = np.zeros((n, patterns.m))
        for j, block in enumerate(partition.transmit):
            covered[block.start:block.stop] = True
            target[block.start:block.stop, :] = cb.gain * patterns.values[:, j]
        for m in range(patterns.m):
            in_err = float(np.abs(realized[covered, m] - target[covered, m]).max())
            out_gain = float(realized[~covered, m].max()) if (~covered).any() else 0.0
            rows.append(",".join([str(s), str(m), repr(cb.gain), repr(cb.gain_spread),
                                  repr(cb.residual), repr(in_err), repr(out_gain)]))
        parent = partition.transmit[0]
    return rows


def cmd_codebook(cfg: dict, config_name: str, args) -> list[Path]:
    n = _require(cfg, "n", int, "codebook")
    k = _require(cfg, "k", int, "codebook")
    variant = cfg.get("variant", OVERLAPPED)
    if variant not in VARIANTS:
        raise ConfigError(f"codebook: unknown variant {variant!r}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    bank = codebook_bank(n, k, variant)
    outputs = []

    pattern_lines = [",".join(repr(float(v)) for v in row)
                     for row in bank.patterns.values]
    outputs.append(_write(out_dir / "pattern_matrix.csv",
                          "\n".join(pattern_lines) + "\n", args.quiet))

    # One bank per stage along the leftmost path; with matching transmit and
    # receive parents the combining bank equals the beamforming bank.
    parent = IndexRange(0, n)
    for s in range(1, stage_count(n, k) + 1):
        partition = partition_subranges(parent, parent, k, stage=s)
        cb = bank.stage_codebook(partition)
        path = out_dir / f"stage_{s}_beams.txt"
        write_beam_matrix(path, cb.f, s, cb.gain)
        if not args.quiet:
            print(f"wrote {path}")
        outputs.append(path)
        parent = partition.transmit[0]

    outputs.append(_write(out_dir / "gain_flatness.csv",
                          "\n".join(_gain_flatness_rows(n, k, variant)) + "\n",
                          args.quiet))
    return outputs


def _slot_table_csv(cfg: dict) -> str:
    k_values = [int(k) for k in _as_list(_require(cfg, "k_values", (int, list), "sweep"))]
    lines = ["k,n,overlapped,non_overlapped"]
    for k in k_values:
        key = f"n_values_k{k}"
        if key not in cfg:
            raise ConfigError(f"sweep: slot table needs key {key!r}")
        for n in _as_list(cfg[key]):
            lines.append(",".join([str(k), str(n),
                                   str(slot_count(n, k, OVERLAPPED)),
                                   str(slot_count(n, k, NON_OVERLAPPED))]))
    return "\n".join(lines) + "\n"


def cmd_sweep(cfg: dict, config_name: str, args) -> list[Path]:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs_wanted = [str(o) for o in _as_list(cfg.get("outputs", "pcef"))]
    for name in outputs_wanted:
        if name not in ("pcef", "alpha_error", "slots"):
            raise ConfigError(f"sweep: unknown output family {name!r}")
    outputs: list[Path] = []

    if "slots" in outputs_wanted:
        outputs.append(_write(out_dir / "slot_counts.csv", _slot_table_csv(cfg),
                              args.quiet))
        if len(outputs_wanted) == 1:
            return outputs

    n = _require(cfg, "n", int, "sweep")
    k = _require(cfg, "k", int, "sweep")
    experiment = ExperimentConfig(
        n=n, k=k, et_db=_energy_grid(cfg, "sweep"),
        trials=_require(cfg, "trials", int, "sweep"),
        master_seed=int(cfg.get("seed", 0)), n0=float(cfg.get("n0", 1.0)),
        var_alpha=_alpha_variance(cfg), variants=_variants(cfg))
    tables = run_sweep(experiment, workers=args.workers)

    if "pcef" in outputs_wanted:
        for variant, table in tables.items():
            outputs.append(_write(out_dir / f"{variant}_pcef.csv", table.to_csv(),
                                  args.quiet))
    if "alpha_error" in outputs_wanted:
        for variant, table in tables.items():
            for estimator, all_col, ok_col in (
                    (ALPHA_MMSE_ALL, "relerr_mmse_all", "relerr_mmse_success"),
                    (ALPHA_FINAL, "relerr_final_all", "relerr_final_success")):
                lines = ["et_db,relerr_all_trials,relerr_successes"]
                for p in table.points:
                    lines.append(",".join([repr(p.et_db), repr(getattr(p, all_col)),
                                           repr(getattr(p, ok_col))]))
                outputs.append(_write(out_dir / f"{variant}_{estimator}_error.csv",
                                      "\n".join(lines) + "\n", args.quiet))
    if cfg.get("bound", False):
        points = bound_table(n, k, experiment.et_db, n0=experiment.n0,
                             var_alpha=experiment.var_alpha)
        outputs.append(_write(out_dir / "bound.csv", bound_csv(points), args.quiet))
    return outputs


def cmd_bound(cfg: dict, config_name: str, args) -> list[Path]:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_values = [int(v) for v in _as_list(_require(cfg, "n", (int, list), "bound"))]
    k_values = [int(v) for v in _as_list(_require(cfg, "k", (int, list), "bound"))]
    if len(n_values) != len(k_values):
        raise ConfigError("bound: 'n' and 'k' lists must pair up one-to-one")
    grid = _energy_grid(cfg, "bound")
    n0 = float(cfg.get("n0", 1.0))
    var_alpha = _alpha_variance(cfg)
    outputs = []
    single = len(n_values) == 1
    for n, k in zip(n_values, k_values):
        points = bound_table(n, k, grid, n0=n0, var_alpha=var_alpha)
        name = "bound.csv" if single else f"bound_k{k}_n{n}.csv"
        outputs.append(_write(out_dir / name, bound_csv(points), args.quiet))
    return outputs


def cmd_trace(cfg: dict, config_name: str, args) -> list[Path]:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = _require(cfg, "n", int, "trace")
    k = _require(cfg, "k", int, "trace")
    trials = _require(cfg, "trials", int, "trace")
    et_db = cfg.get("et_db")
    if not isinstance(et_db, (int, float)) or isinstance(et_db, bool):
        raise ConfigError("trace: 'et_db' must be a single energy value in dB")
    seed = int(cfg.get("seed", 0))
    n0 = float(cfg.get("n0", 1.0))
    experiment = ExperimentConfig(n=n, k=k, et_db=(float(et_db),), trials=trials,
                                  master_seed=seed, n0=n0,
                                  var_alpha=_alpha_variance(cfg),
                                  variants=_variants(cfg))
    outputs = []
    for variant in experiment.variants:
        energy = n0 * 10.0 ** (float(et_db) / 10.0)
        ecfg = EstimatorConfig(
            n=n, k=k, p_t=power_for_energy(energy, n, k, variant), n0=n0,
            var_alpha=experiment.alpha_variance, variant=variant)
        records = []
        for trial in range(trials):
            channel = sample_channel(experiment, trial)
            rng = np.random.default_rng(noise_stream(experiment, trial, variant))
            trace = run_estimation(channel, ecfg, rng)
            records.append(trace_record(trace, channel, trial=trial, seed=seed))
        path = out_dir / f"traces_{variant}.jsonl"
        write_trace_records(path, records)
        if not args.quiet:
            print(f"wrote {path}")
        outputs.append(path)
    return outputs


_COMMANDS = {
    "codebook": cmd_codebook,
    "sweep": cmd_sweep,
    "bound": cmd_bound,
    "trace": cmd_trace,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamest",
        description="Hierarchical beam-search channel estimation experiments.")
    parser.add_argument("command", choices=sorted(_COMMANDS),
                        help="what to run")
    parser.add_argument("--config", required=True,
                        help="config file path or shipped preset name "
                             "(fig3, fig4, table1)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker process cap for Monte Carlo trials")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress progress output")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        config_name, cfg = load_config(args.config)
        if args.seed is not None:
            # resolve the override into the config so the manifest echo alone
            # reproduces the run
            cfg["seed"] = args.seed
        outputs = _COMMANDS[args.command](cfg, config_name, args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - started
    _write_manifest(Path(args.out), args.command, config_name, cfg, args,
                    elapsed, outputs)
    return 0


if __name__ == "__main__":
    sys.exit(main())
