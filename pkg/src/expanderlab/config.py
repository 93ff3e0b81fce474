"""Run configuration: a flat key=value text file with command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

__all__ = ["RunConfig", "load_config", "parse_config_text"]


@dataclass(frozen=True)
class RunConfig:
    n: int = 2
    step: float = 1e-3
    s_max: float = 12.0
    spacing: float = 0.004
    s_trunc: float = 10.0
    solve_tol: float = 1e-8
    null_tol: float = 1e-6
    fold_tol: float = 1e-4
    m_max: int = 2
    out: str = "out"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        for name in ("step", "s_max", "spacing", "s_trunc", "solve_tol", "null_tol", "fold_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.m_max < 0 or self.threads < 1:
            raise ValueError("m_max must be >= 0 and threads >= 1")

    def updated(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def shooting_options(self):
        from .shooting import ShootingOptions
        return ShootingOptions(s_max=self.s_max, step=self.step, solve_tol=self.solve_tol)


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CAST = {"int": int, "float": float, "str": str}


def parse_config_text(text):
    """Parse ``key = value`` lines; '#' starts a comment.  Unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _CAST[_TYPES[key]](val)
    return values


def load_config(path=None, **overrides):
    base = {}
    if path:
        with open(path) as fh:
            base = parse_config_text(fh.read())
    base.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**base)
