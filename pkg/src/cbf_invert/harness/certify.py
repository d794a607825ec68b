"""Seeded safety-certificate runs with the decentralized safety premises enforced."""

from __future__ import annotations

import logging
from typing import NamedTuple

from ..coordinator import CertificateReport, check_safety_certificate
from .config import HarnessConfig
from .rollout import run_rollout
from .scenario import generate_scenario

logger = logging.getLogger(__name__)


class CertificateRun(NamedTuple):
    seed: int
    report: CertificateReport
    failed_steps: int


def run_certificates(cfg: HarnessConfig = None, seeds=None) -> list:
    cfg = cfg or HarnessConfig()
    n = cfg.certify_seeds if seeds is None else int(seeds)
    params = cfg.certificate_params()
    out = []
    for seed in range(cfg.seed, cfg.seed + n):
        spec = generate_scenario(seed, params)
        result = run_rollout(spec, cfg.planner)
        rep = check_safety_certificate(result.world, spec.obstacles)
        if not rep.safe:
            logger.warning("seed %d: clearance %.4g m", seed, rep.min_margin)
        out.append(CertificateRun(seed, rep, result.failed_steps))
    return out


def all_safe(runs) -> bool:
    """True when every run met the premises and kept a nonnegative margin."""
    return all(r.report.premises_ok and r.report.safe for r in runs)
