# File: seqnet/scripts/run_pipeline.py
# Desk-scale pipeline: analyze -> train -> eval -> export-heatmap, each step as its own process

import argparse
import os
import subprocess
import sys
from typing import List, Optional, Sequence

import structlog

from seqnet.services.log import configure_logging

logger = structlog.get_logger(__name__)

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
DEFAULT_CONFIG = os.path.join("configs", "tiny_synthetic.json")
DEFAULT_DATA = "synthetic:10:2000:32"


def run_command(command: List[str]) -> str:
    """Run one pipeline step from the project root with the package importable."""
    logger.info("run_pipeline.run_command: running", command=" ".join(command))
    env = os.environ.copy()
    env["PYTHONPATH"] = PROJECT_ROOT + os.pathsep + env.get("PYTHONPATH", "")
    process = subprocess.run(command, capture_output=True, text=True, cwd=PROJECT_ROOT, env=env)
    if process.returncode != 0:
        logger.error(
            "run_pipeline.run_command: step failed",
            command=" ".join(command),
            exit_code=process.returncode,
            stderr=process.stderr[-2000:],
        )
        raise subprocess.CalledProcessError(process.returncode, command, process.stdout, process.stderr)
    return process.stdout.strip()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="analyze, train, evaluate and export heat maps in one go")
    parser.add_argument("--config", default=DEFAULT_CONFIG)
    parser.add_argument("--data", default=DEFAULT_DATA)
    parser.add_argument("--out", default=os.path.join("runs", "pipeline"))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    configure_logging()

    python = sys.executable
    common = ["--config", args.config, "--out", args.out]
    steps = [
        [python, "-m", "seqnet", "analyze", *common],
        [python, "-m", "seqnet", "train", *common, "--data", args.data, "--seed", str(args.seed)],
        [python, "-m", "seqnet", "eval", "--out", args.out, "--data", args.data],
        [python, "-m", "seqnet", "export-heatmap", "--out", args.out],
    ]
    for step in steps:
        try:
            output = run_command(step)
        except subprocess.CalledProcessError as exc:
            return exc.returncode
        if output:
            print(output)
    logger.info("run_pipeline.main: pipeline complete", out=args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
