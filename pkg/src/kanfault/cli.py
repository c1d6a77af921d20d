"""Command-line entry point.

Every verb takes ``--config`` (JSON, optional), ``--data``, ``--out`` and
``--seed``. Phase verbs exchange state through JSON files in ``--out`` so a
run can be resumed or inspected between phases. Exit codes: 0 success,
1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DataError, KanFaultError
from .features import extract_library
from .pipeline import (
    Report,
    RunConfig,
    emit_provenance,
    emit_report,
    ingest,
    load_features,
    phase,
    prepare_task,
    run_feature_selection,
    run_finalize,
    run_model_selection,
    run_task,
    signal_provenance,
    write_features_csv,
)

log = logging.getLogger("kanfault")

VERBS = ("extract", "select-features", "select-model", "finalize", "run", "report", "provenance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kanfault", description="KAN feature selection, training and symbolic distillation."
    )
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    parser.add_argument("--data", nargs="+", required=True,
                        help="recording manifest (.json) or feature table (.csv); "
                             "report files or directories for 'report' and 'provenance'")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"{path} not found; run the previous phase first") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _single(paths) -> str:
    if len(paths) != 1:
        raise ConfigError("this verb takes exactly one --data path")
    return paths[0]


def _prepared(args, config):
    fm, _ = load_features(_single(args.data), config.extraction)
    with phase("prepare"):
        return prepare_task(fm, config.task)


def run(args) -> None:
    config = (RunConfig.load(args.config) if args.config else RunConfig()).with_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.verb == "extract":
        dataset = ingest(_single(args.data))
        ex = config.extraction
        with phase("extract"):
            fm = extract_library(dataset.recordings, ex.n_cycles, ex.wavelet, ex.wavelet_level)
        write_features_csv(fm, out / "features.csv")
        log.info("wrote %d rows x %d features", *fm.values.shape)
    elif args.verb == "select-features":
        fs = run_feature_selection(_prepared(args, config), config)
        _write_json(out / "feature_selection.json", fs.to_dict())
    elif args.verb == "select-model":
        prep = _prepared(args, config)
        fs = _read_json(out / "feature_selection.json")
        ms = run_model_selection(prep, list(fs["chosen"]["selected"]), config)
        _write_json(out / "model_selection.json", ms.to_dict())
    elif args.verb == "finalize":
        prep = _prepared(args, config)
        fs = _read_json(out / "feature_selection.json")
        ms = _read_json(out / "model_selection.json")
        emit_report(run_finalize(prep, config, fs, ms), out)
    elif args.verb == "run":
        data = _single(args.data)
        report, manifest = run_task(data, config)
        emit_report(report, out, manifest)
    elif args.verb == "report":
        emit_report(Report.load(_single(args.data)), out)
    elif args.verb == "provenance":
        reports = [Report.load(p) for p in args.data]
        # reports built from feature tables only know generic signal names
        named = [r.channel_names for r in reports if not all(n.startswith("signal ") for n in r.channel_names)]
        names = max(named or [r.channel_names for r in reports], key=len, default=[])
        emit_provenance(signal_provenance([r.selected for r in reports], names), out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        run(args)
    except KanFaultError as exc:
        log.error("%s", exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
