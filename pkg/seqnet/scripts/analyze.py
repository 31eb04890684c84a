# File: seqnet/scripts/analyze.py
# Builds the configured network spec and reports its parameter and MAC counts

import argparse
import json
import sys
from pathlib import Path

import structlog

from seqnet.scripts.common import load_config
from seqnet.services.run_config import resolve_network
from seqnet.src.builder import ComplexityReport, count_params, graph_dump
from seqnet.src.errors import EXIT_OK

logger = structlog.get_logger(__name__)

REPORT_NAME = "complexity.json"


def render(report: ComplexityReport) -> str:
    lines = [
        f"{report.name}: {report.total_params:,} params ({report.total_params / 1e6:.2f}M), "
        f"{report.macs:,} MACs ({report.gmacs:.2f}G) at {report.geometry[0]}x{report.geometry[1]}",
        report.table().to_string(index=False),
    ]
    return "\n".join(lines)


def run(args: argparse.Namespace) -> int:
    config = load_config(args)
    spec = resolve_network(config)
    report = count_params(spec)
    print(render(report))
    if args.graph:
        print(graph_dump(spec), end="")

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    document = {**report.model_dump(mode="json"), "gmacs": report.gmacs, "spec": spec.model_dump(mode="json")}
    (out / REPORT_NAME).write_text(json.dumps(document, indent=2), encoding="utf-8")
    logger.info("analyze.run: report written", path=str(out / REPORT_NAME), params=report.total_params)
    return EXIT_OK


def main() -> int:
    from seqnet.scripts.cli import main as cli_main

    return cli_main(["analyze", *sys.argv[1:]])


if __name__ == "__main__":
    sys.exit(main())
