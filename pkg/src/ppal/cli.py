"""Command-line entry point: ``ppal {generate,run,sweep,privacy-table}``.

Flags set individual config fields; a ``--config`` JSON file is applied on
top of them. Configuration errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from ppal import privacy
from ppal.errors import ConfigError
from ppal.harness import GridResult, RunConfig, emit_reports, load_corpus, run_grid, run_single
from ppal.learner import Strategy
from ppal.workload import CorpusSpec, generate, write_corpus

log = logging.getLogger("ppal")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="JSON file whose keys override the flags")
        p.add_argument("--out-dir", type=Path, default=Path("out"))

    gen = sub.add_parser("generate", help="write a synthetic corpus")
    common(gen)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-total", type=int, default=CorpusSpec.n_total)
    gen.add_argument("--n-distinct", type=int, default=CorpusSpec.n_distinct_target)
    gen.add_argument("--output", type=Path, help="corpus path (default OUT_DIR/corpus.tsv)")

    for name, helptext in (("run", "one (beta, k) configuration"), ("sweep", "the full beta x k grid")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--corpus", help="corpus file; default is the generated desk corpus")
        p.add_argument("--strategy", choices=[s.value for s in Strategy])
        p.add_argument("--budget-cap", type=int)
        if name == "run":
            p.add_argument("--beta", type=float, required=True)
            p.add_argument("--k", type=int, required=True)
            p.add_argument("--seed", type=int, default=1)
        else:
            p.add_argument("--beta", type=float, nargs="+", dest="betas")
            p.add_argument("--k", type=int, nargs="+", dest="ks")
            p.add_argument("--seed", type=int, nargs="+", dest="seeds")

    table = sub.add_parser("privacy-table", help="write the (epsilon, delta, beta, k) guarantee grid")
    common(table)
    return parser


def _load_overrides(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _run_config(args: argparse.Namespace, **fixed: Any) -> RunConfig:
    fields: dict[str, Any] = dict(fixed)
    for name in ("strategy", "budget_cap", "betas", "ks", "seeds"):
        value = getattr(args, name, None)
        if value is not None:
            fields[name] = value
    if getattr(args, "corpus", None):
        fields["corpus"] = args.corpus
    fields.update(_load_overrides(args.config))
    return RunConfig.from_dict(fields)


def _warn_weak_delta(config: RunConfig, result: GridResult) -> None:
    """Flag runs whose delta is no smaller than one over the dataset size."""
    n_records = len(load_corpus(config).stream)
    for run in result.runs:
        if run.delta >= 1.0 / n_records:
            log.warning(
                "beta=%s k=%s: delta=%.3g is not below 1/|D|=%.3g; the guarantee is weak",
                run.beta, run.k, run.delta, 1.0 / n_records,
            )


def _generate(args: argparse.Namespace) -> int:
    fields: dict[str, Any] = {"seed": args.seed, "n_total": args.n_total, "n_distinct_target": args.n_distinct}
    fields.update(_load_overrides(args.config))
    try:
        spec = CorpusSpec(**fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    corpus = generate(spec)
    output = args.output or args.out_dir / "corpus.tsv"
    output.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus.stream, corpus.truth, output)
    print(f"wrote {len(corpus.stream)} occurrences of {len(corpus.truth)} queries to {output}")
    return 0


def _run(args: argparse.Namespace) -> int:
    config = _run_config(args, betas=[args.beta], ks=[args.k], seeds=[args.seed])
    beta, k, seed = config.betas[0], config.ks[0], config.seeds[0]
    result = GridResult([run_single(config, beta, k, seed)], [], config)
    _warn_weak_delta(config, result)
    for path in emit_reports(result, args.out_dir):
        print(path)
    return 0


def _sweep(args: argparse.Namespace) -> int:
    config = _run_config(args)
    result = run_grid(config)
    _warn_weak_delta(config, result)
    for path in emit_reports(result, args.out_dir):
        print(path)
    return 1 if result.failures else 0


def _privacy_table(args: argparse.Namespace) -> int:
    config = _run_config(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    cells = privacy.grid(
        privacy.GRID_BETAS, privacy.GRID_KS, config.table_epsilons, config.table_deltas, config.n_max
    )
    path = privacy.write_grid_csv(cells, args.out_dir / "privacy_table.csv")
    print(path)
    return 0


_COMMANDS = {"generate": _generate, "run": _run, "sweep": _sweep, "privacy-table": _privacy_table}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ppal: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
