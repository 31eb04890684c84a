# File: seqnet/scripts/gradcheck.py
# Finite-difference check of every parameter gradient of a small network's training loss

import argparse
import sys
from typing import Optional

import numpy as np
import structlog

from seqnet.scripts.common import load_config
from seqnet.services.run_config import resolve_network
from seqnet.services.trainer import init_weights
from seqnet.src import ops, runtime
from seqnet.src.builder import NetworkSpec, count_params
from seqnet.src.errors import EXIT_NUMERIC, EXIT_OK, InvalidArgumentError
from seqnet.src.gradcheck import DEFAULT_EPS, DEFAULT_TOL, GradCheckReport, grad_check
from seqnet.src.layers import BatchNorm2d
from seqnet.src.tensor import Tensor

logger = structlog.get_logger(__name__)

# --- Configuration ---
MAX_PARAMS = 100_000


def network_grad_check(
    spec: NetworkSpec,
    seed: int = 0,
    batch: int = 4,
    size: int = 8,
    max_coords: Optional[int] = None,
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
) -> GradCheckReport:
    """Cross-entropy of a random batch, checked against every parameter tensor in double precision.

    Residual bodies are not zero-initialized and BN affine parameters are
    randomized so that no gradient is trivially zero.
    """
    if spec.head is None:
        raise InvalidArgumentError("gradcheck.network_grad_check: spec needs a classifier head")
    spec = spec.model_copy(update={"dropout_rate": 0.0})
    with runtime.settings(precision="double"):
        network = init_weights(spec, seed, zero_init_residual=False)
        rng = np.random.default_rng(seed)
        for _, module in network.named_modules():
            if isinstance(module, BatchNorm2d):
                module.gamma.data[...] = rng.uniform(0.5, 1.5, size=module.gamma.shape)
                module.beta.data[...] = rng.normal(0.0, 0.1, size=module.beta.shape)
        x = Tensor(rng.normal(size=(batch, spec.input.channels, size, size)))
        labels = rng.integers(0, spec.head.classes, size=batch)

        def loss(*_params: Tensor) -> Tensor:
            return ops.softmax_cross_entropy(network(x, "train"), labels)

        params = [tensor for _, tensor in network.named_parameters()]
        return grad_check(loss, params, eps=eps, tol=tol, max_coords=max_coords, seed=seed)


def run(args: argparse.Namespace) -> int:
    config = load_config(args)
    spec = resolve_network(config)
    params = count_params(spec).total_params
    if params > MAX_PARAMS:
        raise InvalidArgumentError(
            f"gradcheck: refusing {spec.name} with {params:,} parameters; the check perturbs every "
            f"coordinate twice and is limited to {MAX_PARAMS:,} parameters"
        )
    report = network_grad_check(
        spec, seed=config.train.seed, batch=args.batch, size=args.size, max_coords=args.max_coords or None, tol=args.tol
    )
    verdict = "PASS" if report.passed else "FAIL"
    print(f"gradcheck: {verdict} max_rel_err={report.max_rel_err:.3e} checked={report.checked} worst={report.worst}")
    if report.message:
        print(f"gradcheck: {report.message}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def main() -> int:
    from seqnet.scripts.cli import main as cli_main

    return cli_main(["gradcheck", *sys.argv[1:]])


if __name__ == "__main__":
    sys.exit(main())
