"""
Utility functions for formatting reports and traces
"""
import hashlib
import json
from typing import Any, Dict, Iterable, Mapping, Tuple


def format_scalar(value: float) -> str:
    """Six significant digits, the precision of every logged scalar"""
    return f"{value:.6g}"


def format_loss_report(step: int, scalars: Mapping[str, float]) -> str:
    """One `step=<n> name=<v> ...` line"""
    parts = [f"step={step}"]
    parts.extend(f"{name}={format_scalar(value)}" for name, value in scalars.items())
    return " ".join(parts)


def parse_loss_line(line: str) -> Tuple[int, Dict[str, float]]:
    """Inverse of format_loss_report, for reading train.log back"""
    fields = dict(part.split('=', 1) for part in line.split())
    step = int(fields.pop('step'))
    return step, {name: float(value) for name, value in fields.items()}


def format_rf_trace(trace: Iterable[Tuple[Any, int, int]]) -> str:
    """Receptive-field trace, one layer per line"""
    lines = []
    for index, (layer, r, j) in enumerate(trace, 1):
        lines.append(f"layer {index}: {layer.token} r={r} j={j}")
    return "\n".join(lines)


def config_hash(config: Mapping[str, Any]) -> str:
    """SHA-256 over sorted-key JSON"""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def count_parameters(module) -> int:
    return sum(p.numel() for p in module.parameters())
