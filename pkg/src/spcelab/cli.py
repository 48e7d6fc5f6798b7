"""Command-line front end: configured, reproducible experiment runs.

Subcommands: ``spce``, ``coins``, ``purity``, ``bertrand``, ``qkd``, plus
``replay`` to re-execute a recorded run.  Every run is driven by a single
JSON config document and a master seed, writes its outputs atomically, and
drops a ``manifest.json`` from which the run can be replayed byte-for-byte
(only the manifest's own timestamp differs between replays).

Exit codes: 0 success (purity: verdict pure), 1 purity mixed, 2 purity
inconclusive, 3 invalid config, 4 malformed input data, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import bertrand as bertrand_mod
from . import coin_lab, purity, qkd, spce
from .errors import ConfigError, DomainError, FormatError
from .randkit import Direction, substream

ENV_OUT_ROOT = "SPCELAB_OUT"

EXIT_OK = 0
EXIT_MIXED = 1
EXIT_INCONCLUSIVE = 2
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_IO = 5

#: Runs below this many trials are flagged as statistically weak in reports.
LOW_N = 100


# ---------------------------------------------------------------------------
# config plumbing

def _load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return doc


def _require(condition, message):
    if not condition:
        raise ConfigError(message)


def _get_int(cfg, key, minimum=None, default=None):
    value = cfg.get(key, default)
    _require(value is not None, f"config is missing required field '{key}'")
    _require(isinstance(value, int) and not isinstance(value, bool), f"'{key}' must be an integer")
    if minimum is not None:
        _require(value >= minimum, f"'{key}' must be >= {minimum}, got {value}")
    return value


def _get_number(cfg, key, lo=None, hi=None, default=None):
    value = cfg.get(key, default)
    _require(value is not None, f"config is missing required field '{key}'")
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"'{key}' must be a number")
    if lo is not None:
        _require(value >= lo, f"'{key}' must be >= {lo}, got {value}")
    if hi is not None:
        _require(value <= hi, f"'{key}' must be <= {hi}, got {value}")
    return float(value)


def _parse_axis(value, name) -> Direction:
    """An axis is either a plane angle in degrees or an explicit 3-vector."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return Direction.from_plane_angle(float(value))
    if isinstance(value, (list, tuple)) and len(value) == 3:
        try:
            return Direction.normalized(*[float(v) for v in value])
        except (TypeError, ValueError, DomainError) as exc:
            raise ConfigError(f"axis '{name}' is not a usable 3-vector: {exc}") from exc
    raise ConfigError(f"axis '{name}' must be a degree angle or a 3-vector, got {value!r}")


def _parse_epsilon(value, name):
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool),
        f"'{name}' must be a number",
    )
    _require(0.0 <= value <= 2.0, f"'{name}' must lie in [0, 2], got {value}")
    return float(value)


def _resolve_seed(cfg, args):
    if args.seed is not None:
        _require(0 <= args.seed < 2**64, f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        return args.seed
    seed = cfg.get("seed", 0)
    _require(isinstance(seed, int) and not isinstance(seed, bool), "'seed' must be an integer")
    _require(0 <= seed < 2**64, f"'seed' must be an unsigned 64-bit integer, got {seed}")
    return seed


def _out_dir(args) -> Path:
    if args.out is not None:
        root = Path(args.out)
    else:
        root = Path(os.environ.get(ENV_OUT_ROOT, "spcelab-out"))
    root.mkdir(parents=True, exist_ok=True)
    return root


# ---------------------------------------------------------------------------
# atomic output writing and the run manifest

def _write_text(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _table_file(out: Path, basename: str, header, rows, fmt: str) -> str:
    """Write a tabular output as CSV or JSON records; returns the file name."""
    if fmt == "json":
        records = [dict(zip(header, row)) for row in rows]
        name = f"{basename}.json"
        _write_text(out / name, _json_text(records))
    else:
        name = f"{basename}.csv"
        _write_text(out / name, _csv_text(header, rows))
    return name


def _config_hash(cfg) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _write_manifest(out: Path, command: str, cfg: dict, seed, outputs, fmt: str):
    manifest = {
        "artifact_version": __version__,
        "command": command,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "master_seed": seed,
        "format": fmt,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "outputs": sorted(outputs),
    }
    _write_text(out / "manifest.json", _json_text(manifest))


# ---------------------------------------------------------------------------
# spce

def _spce_plan(cfg):
    axes_cfg = cfg.get("axes")
    _require(isinstance(axes_cfg, dict), "spce config needs an 'axes' object")
    _require("A" in axes_cfg and "B" in axes_cfg, "'axes' must define at least 'A' and 'B'")
    labels = {"A": "A", "A_prime": "A'", "B": "B", "B_prime": "B'"}
    axes = {}
    for key, value in axes_cfg.items():
        _require(key in labels, f"unknown axis '{key}' (expected A, A_prime, B, B_prime)")
        axes[labels[key]] = _parse_axis(value, key)
    eps_cfg = cfg.get("epsilon", 0.0)
    if isinstance(eps_cfg, dict):
        epsilons = {labels[k]: _parse_epsilon(v, f"epsilon.{k}") for k, v in eps_cfg.items() if k in labels}
        for label in axes:
            _require(label in epsilons, f"epsilon missing for axis '{label}'")
    else:
        eps = _parse_epsilon(eps_cfg, "epsilon")
        epsilons = {label: eps for label in axes}
    n = _get_int(cfg, "n", minimum=1)
    pairs = [(x, y) for x, y in [("A", "B"), ("A", "B'"), ("A'", "B"), ("A'", "B'")]
             if x in axes and y in axes]
    return axes, epsilons, n, pairs


def cmd_spce(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(cfg, args)
    axes, epsilons, n, pairs = _spce_plan(cfg)
    out = _out_dir(args)

    record_limit = cfg.get("record_limit")
    if record_limit is not None:
        _require(isinstance(record_limit, int) and record_limit >= 0,
                 "'record_limit' must be a non-negative integer")

    runs = []
    rows = []
    correlators = {}
    for stream_id, (x, y) in enumerate(pairs):
        run = spce.run_experiment(
            spce.Polarizer.from_axis(axes[x], epsilons[x]),
            spce.Polarizer.from_axis(axes[y], epsilons[y]),
            n, seed, stream_id,
        )
        r = spce.empirical_correlator(run)
        correlators[x + y] = r
        rows.append([x + y, r, spce.correlator_stderr(r, n), n])
        runs.append(run)

    spce.write_run_jsonl(runs, out / "runs.jsonl", record_limit=record_limit)
    table = _table_file(out, "correlators", ["setting_pair", "r", "stderr", "n"], rows, args.format)

    if len(pairs) == 4:
        s_value = spce.chsh(*(correlators[x + y] for x, y in pairs))
        stderr_s = math.sqrt(sum(spce.correlator_stderr(correlators[x + y], n) ** 2 for x, y in pairs))
    else:
        s_value, stderr_s = None, None
    report = {
        "S": s_value,
        "stderr_S": stderr_s,
        "pairs": correlators,
        "n_per_pair": n,
        "low_n": n < LOW_N,
        "note": None if len(pairs) == 4 else "CHSH needs all four axes (A, A_prime, B, B_prime)",
    }
    _write_text(out / "chsh.json", _json_text(report))

    outputs = ["runs.jsonl", table, "chsh.json"]
    _write_manifest(out, "spce", cfg, seed, outputs, args.format)
    print(f"spce: {len(pairs)} setting pair(s), n={n} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# coins

_SUMMARY_HEADER = ["experiment", "runs", "n", "mean_count_b", "var_count_b",
                   "mean_fraction_b", "z", "p"]


def _coins_series(experiment, cfg, seed, stream_id, urn):
    """One run of the configured experiment on substream (seed, stream_id)."""
    rng = substream(seed, stream_id)
    n = _get_int(cfg, "n", minimum=1)
    if experiment in ("E1", "E2", "E3"):
        kind = {"E1": coin_lab.DeviceKind.D1_FLIP,
                "E2": coin_lab.DeviceKind.D2_ALTERNATING,
                "E3": coin_lab.DeviceKind.D3_BERNOULLI}[experiment]
        face = cfg.get("initial_face", "B")
        _require(face in ("B", "R"), f"'initial_face' must be 'B' or 'R', got {face!r}")
        return coin_lab.run_device(kind, coin_lab.CoinFace[face], n, rng)
    if experiment == "E4":
        series, _ = coin_lab.draw_urn(urn, n, bool(cfg.get("with_replacement", False)), rng)
        return series
    box = coin_lab.BoxKind.MIXED_E5 if experiment == "E5" else coin_lab.BoxKind.PURE_E6
    return coin_lab.run_box_experiment(box, urn, n, rng)


def _coins_urn(cfg, seed):
    urn_cfg = cfg.get("urn")
    if urn_cfg is None:
        return None
    _require(isinstance(urn_cfg, list) and len(urn_cfg) == 2
             and all(isinstance(v, int) and v >= 0 for v in urn_cfg),
             "'urn' must be a [n_blue, n_red] pair of non-negative integers")
    urn = coin_lab.UrnState(urn_cfg[0], urn_cfg[1])
    remove = cfg.get("remove", 0)
    _require(isinstance(remove, int) and remove >= 0, "'remove' must be a non-negative integer")
    if remove:
        _require(remove <= urn.total, f"cannot remove {remove} coins from {urn.total}")
        urn = coin_lab.remove_coins(urn, remove, substream(seed, 0))
    return urn


def _summarize(experiment, counts, runs, n):
    counts = np.asarray(counts, dtype=float)
    return [experiment, runs, n, float(counts.mean()),
            float(counts.var(ddof=1)) if runs > 1 else None,
            float(counts.mean() / n), None, None]


def cmd_coins(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(cfg, args)
    experiment = cfg.get("experiment")
    _require(experiment in ("E1", "E2", "E3", "E4", "E5", "E6", "E5E6"),
             f"'experiment' must be one of E1..E6 or E5E6, got {experiment!r}")
    runs = _get_int(cfg, "runs", minimum=1, default=1)
    n = _get_int(cfg, "n", minimum=1)
    series_limit = _get_int(cfg, "series_limit", minimum=0, default=10)
    urn = _coins_urn(cfg, seed)
    if experiment in ("E4", "E5", "E6", "E5E6"):
        _require(urn is not None, f"experiment {experiment} requires an 'urn'")
    out = _out_dir(args)

    experiments = ["E5", "E6"] if experiment == "E5E6" else [experiment]
    outputs = []
    rows = []
    pooled = {}
    for exp_index, exp in enumerate(experiments):
        serialized = []
        counts = np.empty(runs, dtype=np.int64)
        for r in range(runs):
            # stream 0 is reserved for the removal perturbation
            series = _coins_series(exp, cfg, seed, 1 + exp_index * runs + r, urn)
            counts[r] = int(np.sum(series.values == 1))
            if r < series_limit:
                serialized.append(series)
        name = "series.jsonl" if len(experiments) == 1 else f"series_{exp.lower()}.jsonl"
        coin_lab.write_timeseries_jsonl(serialized, out / name)
        outputs.append(name)
        rows.append(_summarize(exp, counts, runs, n))
        pooled[exp] = counts

    if experiment == "E5E6":
        p1 = pooled["E5"].sum() / (runs * n)
        p2 = pooled["E6"].sum() / (runs * n)
        p_bar = (pooled["E5"].sum() + pooled["E6"].sum()) / (2 * runs * n)
        se = math.sqrt(max(p_bar * (1 - p_bar) * 2 / (runs * n), 1e-300))
        z = (p1 - p2) / se
        rows.append(["E5_vs_E6", runs, n, None, None, None, z,
                     float(math.erfc(abs(z) / math.sqrt(2)))])

    table = _table_file(out, "summary", _SUMMARY_HEADER, rows, args.format)
    outputs.append(table)
    _write_manifest(out, "coins", cfg, seed, outputs, args.format)
    print(f"coins: {experiment}, {runs} run(s) of n={n} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# purity

def _purity_samples(cfg, seed, config_dir):
    if ("inputs" in cfg) == ("generate" in cfg):
        raise ConfigError("purity config needs exactly one of 'inputs' or 'generate'")
    samples = []
    if "inputs" in cfg:
        paths = cfg["inputs"]
        _require(isinstance(paths, list) and paths, "'inputs' must be a non-empty list of paths")
        for path in paths:
            resolved = Path(path)
            if not resolved.is_absolute():
                resolved = config_dir / resolved
            for i, series in enumerate(coin_lab.read_timeseries_jsonl(resolved)):
                samples.append(purity.Sample(series, f"{Path(path).stem}[{i}]"))
    else:
        gen = cfg["generate"]
        _require(isinstance(gen, dict) and isinstance(gen.get("experiments"), list),
                 "'generate' must hold an 'experiments' list")
        stream_id = 1
        for entry in gen["experiments"]:
            _require(isinstance(entry, dict), "each generate entry must be an object")
            box_name = entry.get("box")
            _require(box_name in ("E5", "E6"), f"generate 'box' must be 'E5' or 'E6', got {box_name!r}")
            urn_cfg = entry.get("urn")
            _require(isinstance(urn_cfg, list) and len(urn_cfg) == 2,
                     "generate entry needs 'urn': [n_blue, n_red]")
            urn = coin_lab.UrnState(int(urn_cfg[0]), int(urn_cfg[1]))
            n = _get_int(entry, "n", minimum=1)
            count = _get_int(entry, "count", minimum=1, default=1)
            box = coin_lab.BoxKind.MIXED_E5 if box_name == "E5" else coin_lab.BoxKind.PURE_E6
            for _ in range(count):
                series = coin_lab.run_box_experiment(box, urn, n, substream(seed, stream_id))
                samples.append(purity.Sample(series, f"S{stream_id - 1}"))
                stream_id += 1
    _require(len(samples) >= 2, f"purity needs at least 2 samples, found {len(samples)}")
    return samples


def _purity_procedures(cfg):
    procedures = []
    for entry in cfg.get("procedures", []):
        _require(isinstance(entry, dict) and "kind" in entry, "each procedure needs a 'kind'")
        try:
            procedures.append(purity.Reduction(entry["kind"], entry.get("param", 1.0)))
        except DomainError as exc:
            raise ConfigError(f"bad procedure {entry}: {exc}") from exc
    return procedures


def cmd_purity(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(cfg, args)
    alpha = args.alpha if args.alpha is not None else _get_number(cfg, "alpha", lo=0.0, hi=1.0, default=0.05)
    _require(0.0 < alpha < 1.0, f"alpha must lie in (0, 1), got {alpha}")
    samples = _purity_samples(cfg, seed, Path(args.config).resolve().parent)
    procedures = _purity_procedures(cfg)
    verdict = purity.purity_verdict(
        samples,
        procedures,
        _get_int(cfg, "subensemble_count", minimum=0, default=0),
        alpha,
        master_seed=seed,
        subensemble_fraction=_get_number(cfg, "subensemble_fraction", lo=0.0, hi=1.0, default=0.5),
        power_floor=_get_int(cfg, "power_floor", minimum=0, default=purity.DEFAULT_POWER_FLOOR),
    )
    out = _out_dir(args)
    _write_text(out / "verdict.json", _json_text(verdict.to_dict()))
    # record the effective alpha so a --alpha override survives replay
    _write_manifest(out, "purity", {**cfg, "alpha": alpha}, seed, ["verdict.json"], args.format)
    print(f"purity: verdict {verdict.verdict.value} -> {out}")
    return {"pure": EXIT_OK, "mixed": EXIT_MIXED, "inconclusive": EXIT_INCONCLUSIVE}[verdict.verdict.value]


# ---------------------------------------------------------------------------
# bertrand

def cmd_bertrand(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(cfg, args)
    machines = cfg.get("machines", ["M1", "M2", "M3"])
    _require(isinstance(machines, list) and machines, "'machines' must be a non-empty list")
    for name in machines:
        _require(name in ("M1", "M2", "M3"), f"unknown machine {name!r}")
    n = _get_int(cfg, "n", minimum=1)
    out = _out_dir(args)

    rows = []
    for name in machines:
        est = bertrand_mod.estimate_probability(bertrand_mod.Machine(name), n, seed)
        rows.append([name, est.n, est.p_hat, est.stderr, seed, est.n < LOW_N])
    table = _table_file(out, "bertrand", ["machine", "n", "p_hat", "stderr", "seed", "low_n"],
                        rows, args.format)
    _write_manifest(out, "bertrand", cfg, seed, [table], args.format)
    print(f"bertrand: {len(machines)} machine(s), n={n} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# qkd

def cmd_qkd(args) -> int:
    cfg = _load_config(args.config)
    seed = _resolve_seed(cfg, args)
    axis = _parse_axis(cfg.get("axis", 0.0), "axis")
    eps_cfg = cfg.get("epsilon", 0.0)
    if isinstance(eps_cfg, list):
        _require(len(eps_cfg) == 2, "'epsilon' list must be [eps_alice, eps_bob]")
        eps_a, eps_b = (_parse_epsilon(v, "epsilon") for v in eps_cfg)
    else:
        eps_a = eps_b = _parse_epsilon(eps_cfg, "epsilon")
    n = _get_int(cfg, "n", minimum=1)
    out = _out_dir(args)

    keys = qkd.generate_keys(axis, n, eps_a, eps_b, seed, stream_id=0)
    report = {
        "n": n,
        "eps_a": eps_a,
        "eps_b": eps_b,
        "mismatch": qkd.mismatch_rate(keys),
        "low_n": n < LOW_N,
        "chsh": None,
    }
    test_cfg = cfg.get("test")
    if test_cfg is not None:
        _require(isinstance(test_cfg, dict), "'test' must be an object")
        axes_cfg = test_cfg.get("axes", {})
        required = ("A", "A_prime", "B", "B_prime")
        _require(all(k in axes_cfg for k in required),
                 "'test.axes' must define A, A_prime, B, B_prime")
        test_axes = [_parse_axis(axes_cfg[k], f"test.axes.{k}") for k in required]
        n_test = _get_int(test_cfg, "n", minimum=1)
        adversary = bool(test_cfg.get("adversary", False))
        s_value = qkd.ekert_test_statistic(*test_axes, n_test, eps_a, eps_b, seed,
                                           adversary=adversary, stream_base=1)
        report["chsh"] = {"S": s_value, "n_test": n_test, "adversary": adversary,
                          "low_n": n_test < LOW_N}

    _write_text(out / "keys.json", qkd.keys_to_json(keys) + "\n")
    _write_text(out / "report.json", _json_text(report))
    _write_manifest(out, "qkd", cfg, seed, ["keys.json", "report.json"], args.format)
    print(f"qkd: n={n}, mismatch={report['mismatch']:.6f} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay

_COMMANDS = {}


def cmd_replay(args) -> int:
    manifest_path = Path(args.manifest)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    for key in ("command", "config", "master_seed"):
        _require(key in manifest, f"manifest is missing '{key}'")
    command = manifest["command"]
    _require(command in _COMMANDS, f"manifest names unknown command {command!r}")

    out = Path(args.out) if args.out is not None else manifest_path.parent
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False, encoding="utf-8") as fh:
        json.dump(manifest["config"], fh)
        config_path = fh.name
    try:
        replay_args = argparse.Namespace(
            config=config_path,
            seed=manifest["master_seed"],
            out=str(out),
            alpha=None,
            format=manifest.get("format", "csv"),
        )
        return _COMMANDS[command](replay_args)
    finally:
        os.unlink(config_path)


_COMMANDS.update({
    "spce": cmd_spce,
    "coins": cmd_coins,
    "purity": cmd_purity,
    "bertrand": cmd_bertrand,
    "qkd": cmd_qkd,
})


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spcelab",
        description="Reproducible Monte Carlo experiments: correlation pairs, coin devices, "
                    "purity tests, random chords, and raw key extraction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_alpha=False):
        p.add_argument("--config", required=True, help="path to the JSON config document")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${ENV_OUT_ROOT} or ./spcelab-out)")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="format for tabular outputs")
        if with_alpha:
            p.add_argument("--alpha", type=float, default=None,
                           help="significance level (overrides config)")
        else:
            p.set_defaults(alpha=None)

    for name, func, with_alpha in (
        ("spce", cmd_spce, False),
        ("coins", cmd_coins, False),
        ("purity", cmd_purity, True),
        ("bertrand", cmd_bertrand, False),
        ("qkd", cmd_qkd, False),
    ):
        p = sub.add_parser(name, help=f"run the {name} experiment from a config document")
        add_common(p, with_alpha)
        p.set_defaults(func=func)

    replay = sub.add_parser("replay", help="re-execute a recorded run from its manifest")
    replay.add_argument("manifest", help="path to a manifest.json written by a previous run")
    replay.add_argument("--out", default=None,
                        help="output directory (default: the manifest's directory)")
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
