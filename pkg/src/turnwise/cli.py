"""Command-line front door.

Subcommands:
  segment             split think text into units (rule-based or remote)
  build-data          run the SFT data pipeline over trace records
  analyze-redundancy  probe traces and report the redundancy metric
  reward-eval         score response files against gold answers
  bench               run live sessions over a dataset and report
                      accuracy, token usage, TTFT, and turn distribution
  serve               launch the HTTP gateway

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
Configuration comes from --backend-config (same JSON file the gateway
reads) plus TURNWISE_* environment overrides; bench flags like
--max-turns layer on top of that.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .backend import BackendClient, BackendError
from .config import ConfigError, ServiceConfig, load_config
from .controller import SessionError, run_session
from .core import Query, answers_equal, extract_boxed
from .gateway import create_app
from .pipeline import (
    aggregate_redundancy,
    format_summary_table,
    read_trace_records,
    run_pipeline,
    summary_to_dict,
    write_sft_examples,
)
from .rewards import RewardConfig, check_accuracy, compute_reward, load_cue_lexicon
from .segment import (
    EmptyInput,
    MarkerLexicon,
    RoundTripMismatch,
    segment_remote,
    segment_rule_based,
    validate_round_trip,
)


class CliError(Exception):
    """Failure with a chosen exit code: 2 for input, 1 for runtime."""

    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


# -- bench domain types -------------------------------------------------------


@dataclass(frozen=True)
class BenchRecord:
    id: str
    problem: str
    gold_answer: str

    def __post_init__(self):
        for name in ("id", "problem", "gold_answer"):
            if not getattr(self, name):
                raise ValueError(f"bench record field {name} must be non-empty")


@dataclass(frozen=True)
class BenchRow:
    record_id: str
    run: int
    correct: bool
    failed: bool
    turns: int
    output_tokens: int
    think_tokens: int
    answer_tokens: int
    ttft_ms: float | None
    total_ms: float | None
    final_answer: str = ""
    error: str | None = None


@dataclass(frozen=True)
class BenchReport:
    accuracy: float
    mean_output_tokens: float | None
    mean_think_tokens: float | None
    mean_answer_tokens: float | None
    mean_ttft_ms: float | None
    mean_total_ms: float | None
    turn_histogram: dict = field(default_factory=dict)
    rows: tuple = ()
    excluded: int = 0

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0):
            raise ValueError("accuracy must lie in [0, 1]")
        if sum(self.turn_histogram.values()) != len(self.rows):
            raise ValueError("turn histogram mass must equal the row count")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_output_tokens": self.mean_output_tokens,
            "mean_think_tokens": self.mean_think_tokens,
            "mean_answer_tokens": self.mean_answer_tokens,
            "mean_ttft_ms": self.mean_ttft_ms,
            "mean_total_ms": self.mean_total_ms,
            "turn_histogram": {str(k): v for k, v in self.turn_histogram.items()},
            "rows": [asdict(r) for r in self.rows],
            "excluded": self.excluded,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BenchReport":
        return cls(
            accuracy=data["accuracy"],
            mean_output_tokens=data["mean_output_tokens"],
            mean_think_tokens=data["mean_think_tokens"],
            mean_answer_tokens=data["mean_answer_tokens"],
            mean_ttft_ms=data["mean_ttft_ms"],
            mean_total_ms=data["mean_total_ms"],
            turn_histogram={int(k): v for k, v in data["turn_histogram"].items()},
            rows=tuple(BenchRow(**row) for row in data["rows"]),
            excluded=data["excluded"],
        )


def build_bench_report(rows: list[BenchRow]) -> BenchReport:
    ok = [r for r in rows if not r.failed]
    histogram: dict[int, int] = {}
    for row in rows:
        histogram[row.turns] = histogram.get(row.turns, 0) + 1

    def mean(values):
        values = list(values)
        return sum(values) / len(values) if values else None

    return BenchReport(
        accuracy=(sum(1 for r in rows if r.correct) / len(rows)) if rows else 0.0,
        mean_output_tokens=mean(r.output_tokens for r in ok),
        mean_think_tokens=mean(r.think_tokens for r in ok),
        mean_answer_tokens=mean(r.answer_tokens for r in ok),
        mean_ttft_ms=mean(r.ttft_ms for r in ok if r.ttft_ms is not None),
        mean_total_ms=mean(r.total_ms for r in ok if r.total_ms is not None),
        turn_histogram=dict(sorted(histogram.items())),
        rows=tuple(rows),
        excluded=len(rows) - len(ok),
    )


def format_bench_table(report: BenchReport) -> str:
    def fmt(value, suffix=""):
        return "n/a" if value is None else f"{value:.1f}{suffix}"

    lines = [
        f"runs: {len(report.rows)}  accuracy: {report.accuracy:.3f}"
        f"  excluded from means (failed): {report.excluded}",
        f"mean output tokens: {fmt(report.mean_output_tokens)}"
        f" (think {fmt(report.mean_think_tokens)},"
        f" answer {fmt(report.mean_answer_tokens)})",
        f"mean TTFT: {fmt(report.mean_ttft_ms, ' ms')}"
        f"  mean total: {fmt(report.mean_total_ms, ' ms')}",
        "turns  runs",
    ]
    for turns, count in report.turn_histogram.items():
        lines.append(f"{turns:>5}  {count}")
    return "\n".join(lines)


# -- shared helpers -----------------------------------------------------------


def _read_jsonl(path: str) -> list[tuple[int, dict]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise CliError(f"{path}:{lineno}: each line must hold an object")
        rows.append((lineno, obj))
    return rows


def _require(obj: dict, key: str, path: str, lineno: int) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value.strip():
        raise CliError(f"{path}:{lineno}: missing or empty field {key!r}")
    return value


def _load_service_config(args) -> ServiceConfig:
    try:
        return load_config(getattr(args, "backend_config", None))
    except ConfigError as exc:
        raise CliError(str(exc)) from exc


def _open_backend(args) -> BackendClient:
    return BackendClient(_load_service_config(args).backend)


def _backend_configured(args) -> bool:
    """A backend is configured via the flag or the base-url env override."""
    return (
        getattr(args, "backend_config", None) is not None
        or "TURNWISE_BASE_URL" in os.environ
    )


def _load_lexicon(args) -> MarkerLexicon | None:
    path = getattr(args, "lexicon", None)
    if path is None:
        return None
    try:
        return load_cue_lexicon(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load lexicon {path}: {exc}") from exc


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# -- subcommands --------------------------------------------------------------


def cmd_segment(args) -> int:
    rows = _read_jsonl(args.input)
    lexicon = _load_lexicon(args)
    backend = None
    if args.mode == "remote":
        if not _backend_configured(args):
            raise CliError("remote mode needs --backend-config or TURNWISE_BASE_URL")
        backend = _open_backend(args)

    mismatches: list[str] = []
    histogram: dict[int, int] = {}
    out_lines = []
    try:
        for lineno, obj in rows:
            record_id = _require(obj, "id", args.input, lineno)
            think = _require(obj, "think", args.input, lineno)
            try:
                if backend is None:
                    seg = segment_rule_based(think, lexicon)
                else:
                    seg = segment_remote(
                        think, backend,
                        question=obj.get("problem", ""), lexicon=lexicon,
                    )
            except EmptyInput as exc:
                raise CliError(f"{args.input}:{lineno}: {exc}") from exc
            try:
                validate_round_trip(think, seg.units)
            except RoundTripMismatch:
                mismatches.append(record_id)
            histogram[len(seg.units)] = histogram.get(len(seg.units), 0) + 1
            out_lines.append(
                json.dumps(
                    {**obj, "units": [u.text for u in seg.units], "method": seg.method},
                    ensure_ascii=False,
                )
            )
    finally:
        if backend is not None:
            backend.close()

    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out_lines) + ("\n" if out_lines else ""))
    print(f"segmented {len(out_lines)} records -> {args.output}")
    print("units  records")
    for units, count in sorted(histogram.items()):
        print(f"{units:>5}  {count}")
    for record_id in mismatches:
        print(f"round-trip mismatch: {record_id}")
    return 0


def _run_probe_pipeline(args):
    try:
        records = read_trace_records(args.input)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if not _backend_configured(args):
        raise CliError("probe runs need --backend-config or TURNWISE_BASE_URL")
    backend = _open_backend(args)
    try:
        outcomes = run_pipeline(
            records, backend, lexicon=_load_lexicon(args), workers=args.workers
        )
    finally:
        backend.close()
    return records, outcomes


def _outcome_rows(outcomes) -> list[dict]:
    rows = []
    for outcome in outcomes:
        row = {"id": outcome.record.query.id, "kept": outcome.kept, "note": outcome.note}
        if outcome.report is not None:
            row.update(
                n=outcome.report.n, n_star=outcome.report.n_star, urr=outcome.report.urr
            )
        rows.append(row)
    return rows


def cmd_build_data(args) -> int:
    records, outcomes = _run_probe_pipeline(args)
    emitted = write_sft_examples(args.output, outcomes)
    summary = aggregate_redundancy(
        [o.report for o in outcomes if o.report is not None]
    )
    print(f"read {len(records)} records, emitted {emitted} SFT examples -> {args.output}")
    print(format_summary_table(summary))
    for outcome in outcomes:
        if outcome.note:
            print(f"{outcome.record.query.id}: {outcome.note}")
    if args.report is not None:
        _write_json(
            args.report,
            {
                "input_records": len(records),
                "emitted": emitted,
                "summary": summary_to_dict(summary),
                "records": _outcome_rows(outcomes),
            },
        )
    if records and emitted == 0:
        raise CliError("no SFT examples could be emitted", code=1)
    return 0


def cmd_analyze_redundancy(args) -> int:
    records, outcomes = _run_probe_pipeline(args)
    reports = [o.report for o in outcomes if o.report is not None]
    summary = aggregate_redundancy(reports)
    print(format_summary_table(summary))
    if args.output is not None:
        _write_json(
            args.output,
            {
                "input_records": len(records),
                "summary": summary_to_dict(summary),
                "records": _outcome_rows(outcomes),
            },
        )
    if records and not reports:
        raise CliError("no record produced a redundancy report", code=1)
    return 0


def cmd_reward_eval(args) -> int:
    responses = _read_jsonl(args.input)
    gold_rows = _read_jsonl(args.gold)
    gold = {}
    for lineno, obj in gold_rows:
        gold[_require(obj, "id", args.gold, lineno)] = _require(
            obj, "answer", args.gold, lineno
        )
    ids = [_require(obj, "id", args.input, lineno) for lineno, obj in responses]
    missing_gold = [i for i in ids if i not in gold]
    missing_resp = sorted(set(gold) - set(ids))
    if missing_gold or missing_resp:
        for i in missing_gold:
            print(f"no gold answer for id {i}", file=sys.stderr)
        for i in missing_resp:
            print(f"no response for id {i}", file=sys.stderr)
        raise CliError("response and gold files do not align by id")

    config = None
    if args.reward_config is not None:
        try:
            config = RewardConfig.from_file(args.reward_config)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load reward config: {exc}") from exc
    lexicon = None
    if args.lexicon is not None:
        try:
            lexicon = load_cue_lexicon(args.lexicon)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load lexicon {args.lexicon}: {exc}") from exc

    rows = []
    histogram: dict[str, int] = {}
    print(f"{'id':<12} {'format':>7} {'accuracy':>9} {'unit':>6} {'total':>7}")
    for (lineno, obj), record_id in zip(responses, ids):
        text = _require(obj, "response", args.input, lineno)
        breakdown = compute_reward(
            text, gold[record_id], reward_config=config, cue_lexicon=lexicon
        )
        total = breakdown.total
        histogram[f"{total:g}"] = histogram.get(f"{total:g}", 0) + 1
        print(
            f"{record_id:<12} {breakdown.format:>7g} {breakdown.accuracy:>9g}"
            f" {breakdown.unit:>6g} {total:>7g}"
        )
        rows.append(
            {
                "id": record_id,
                "format": breakdown.format,
                "accuracy": breakdown.accuracy,
                "unit": breakdown.unit,
                "total": total,
            }
        )
    print("totals histogram: " + json.dumps(histogram, sort_keys=True))
    if args.output is not None:
        _write_json(args.output, {"rows": rows, "totals_histogram": histogram})
    return 0


def read_bench_records(path: str) -> list[BenchRecord]:
    records = []
    for lineno, obj in _read_jsonl(path):
        try:
            records.append(
                BenchRecord(
                    id=_require(obj, "id", path, lineno),
                    problem=_require(obj, "problem", path, lineno),
                    gold_answer=_require(obj, "answer", path, lineno),
                )
            )
        except ValueError as exc:
            raise CliError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise CliError(f"{path} holds no records")
    return records


def run_bench(records, service: ServiceConfig, repeat: int = 1, workers: int = 4,
              seed: int = 0) -> BenchReport:
    session_config = service.session
    jobs = [
        (index, run, record)
        for index, record in enumerate(records)
        for run in range(repeat)
    ]
    # submission order is shuffled for load spread; output order is not
    random.Random(seed).shuffle(jobs)

    client = BackendClient(service.backend)

    def one(job):
        index, run, record = job
        query = Query(id=record.id, problem=record.problem, gold_answer=record.gold_answer)
        try:
            result = run_session(query, session_config, client)
        except (SessionError, BackendError) as exc:
            state = getattr(exc, "state", None)
            return index, run, BenchRow(
                record_id=record.id, run=run, correct=False, failed=True,
                turns=len(state.turns) if state is not None else 0,
                output_tokens=0, think_tokens=0, answer_tokens=0,
                ttft_ms=None, total_ms=None, error=str(exc),
            )
        final = result.final_answer
        correct = answers_equal(extract_boxed(final), record.gold_answer)
        return index, run, BenchRow(
            record_id=record.id, run=run, correct=correct, failed=False,
            turns=len(result.response.turns),
            output_tokens=result.stats.output_tokens,
            think_tokens=sum(r.think_tokens for r in result.state.turns),
            answer_tokens=sum(r.answer_tokens for r in result.state.turns),
            ttft_ms=result.stats.ttft_ms,
            total_ms=result.stats.total_ms,
            final_answer=final,
        )

    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(one, jobs))
    finally:
        client.close()
    results.sort(key=lambda item: (item[0], item[1]))
    return build_bench_report([row for _, _, row in results])


def cmd_bench(args) -> int:
    records = read_bench_records(args.input)
    if not _backend_configured(args):
        raise CliError("bench needs --backend-config or TURNWISE_BASE_URL")
    service = _load_service_config(args)
    overrides = {}
    if args.max_turns is not None:
        overrides["max_turns"] = args.max_turns
    if args.halt_policy is not None:
        overrides["halt_policy"] = args.halt_policy
    if overrides:
        try:
            service = replace(service, session=replace(service.session, **overrides))
        except ValueError as exc:
            raise CliError(str(exc)) from exc

    client = BackendClient(service.backend)
    try:
        reachable = client.health()
    finally:
        client.close()
    if not reachable:
        raise CliError(f"backend at {service.backend.base_url} is unreachable", code=1)

    report = run_bench(
        records, service, repeat=args.repeat, workers=args.workers, seed=args.seed
    )
    print(format_bench_table(report))
    if args.output is not None:
        _write_json(args.output, report.to_dict())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    service = _load_service_config(args)
    host = args.host if args.host is not None else service.host
    port = args.port if args.port is not None else service.port
    uvicorn.run(create_app(service), host=host, port=port, log_level="info")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="turnwise",
        description="Multi-turn reasoning toolkit: data pipeline, rewards, "
        "benchmarks, and a live session gateway.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output_required=True):
        p.add_argument("--input", required=True, help="input JSONL file")
        p.add_argument(
            "--output", required=output_required,
            help="output file" + ("" if output_required else " (optional)"),
        )

    p = sub.add_parser("segment", help="split think text into units")
    common(p)
    p.add_argument("--lexicon", help="marker lexicon file, one phrase per line")
    p.add_argument("--mode", choices=("rule", "remote"), default="rule")
    p.add_argument("--backend-config", help="service config JSON (remote mode)")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("build-data", help="emit SFT examples from trace records")
    common(p)
    p.add_argument("--report", help="also write a JSON pipeline report")
    p.add_argument("--backend-config", required=False)
    p.add_argument("--lexicon")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("analyze-redundancy", help="probe traces, report redundancy")
    common(p, output_required=False)
    p.add_argument("--backend-config", required=False)
    p.add_argument("--lexicon")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_analyze_redundancy)

    p = sub.add_parser("reward-eval", help="score responses against gold answers")
    p.add_argument("--input", required=True, help="responses JSONL {id, response}")
    p.add_argument("--gold", required=True, help="gold JSONL {id, answer}")
    p.add_argument("--reward-config", help="reward values JSON")
    p.add_argument("--lexicon")
    p.add_argument("--output", help="also write JSON rows")
    p.set_defaults(func=cmd_reward_eval)

    p = sub.add_parser("bench", help="run sessions over a dataset and report")
    p.add_argument("--input", required=True, help="dataset JSONL {id, problem, answer}")
    p.add_argument("--output", help="machine-readable report JSON")
    p.add_argument("--backend-config", required=False)
    p.add_argument("--max-turns", type=int)
    p.add_argument("--halt-policy", choices=("fixed", "consistency", "manual"))
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=1, help="runs per record")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="launch the HTTP gateway")
    p.add_argument("--backend-config")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
