"""Compute and transfer delay model.

Unit conventions, used everywhere: 1 MB = 8e6 bits, 1 Mbps = 1e6 bits/s.
Training cost is eta0 cycles per bit over phi0 bits for beta epochs;
validating one candidate costs eta1 cycles per bit over phi1 bits, alpha
candidates per iteration. A node with CPU frequency f (Hz) therefore
spends d0 + d1 seconds per iteration, plus payload/bandwidth for moves.
"""

from __future__ import annotations


def compute_delays(cfg, f: float) -> tuple[float, float, float]:
    """Per-iteration (training delay d0, validation delay d1, total h) at frequency f."""
    if f <= 0:
        raise ValueError(f"cpu frequency must be > 0, got {f}")
    d0 = cfg.eta0 * cfg.phi0 * cfg.beta / f
    d1 = cfg.eta1 * cfg.phi1 * cfg.alpha / f
    return d0, d1, d0 + d1


def transfer_delay(cfg, payload_bits: float) -> float:
    """Seconds to move payload_bits at the configured bandwidth."""
    if payload_bits < 0:
        raise ValueError(f"payload must be >= 0 bits, got {payload_bits}")
    return payload_bits / cfg.bandwidth
