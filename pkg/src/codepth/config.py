"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Tuple

METHODS = ("fine_tune", "reg_only", "replay_only", "proposed")
METHOD_ALIASES = {"ft": "fine_tune", "reg": "reg_only", "rep": "replay_only", "prop": "proposed"}
METHOD_LABELS = {"fine_tune": "FT", "reg_only": "Reg.", "replay_only": "Rep.", "proposed": "Prop."}
MODES = ("stereo", "sfm")

# values the original experiments used where this implementation runs smaller
REFERENCE_SCALE = {"width": 320, "height": 256}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str = "stereo"
    method: str = "proposed"
    seed: int = 0
    seeds: Tuple[int, ...] = (0, 1, 2)
    world_seed: int = 0
    # optimiser and loss
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch: int = 1
    alpha_l: float = 0.1
    gamma: float = 1e-2
    beta_p: float = 0.15
    beta_ss: float = 0.85
    beta_s: float = 0.1
    # detector
    detector_warmup: int = 10
    detector_init_var: float = 1e-4
    # replay
    replay_capacity: int = 2048
    replay_preload: bool = True
    replay_reg: str = "last_online"
    # benchmark
    width: int = 64
    height: int = 48
    frames_per_domain: int = 600
    domains_per_distribution: int = 6
    online_distribution: str = "B"
    eval_frames_per_domain: int = 0  # 0 = every held-out frame
    # schedule
    pretrain_epochs: int = 2
    eval_every: int = 200
    checkpoint_every: int = 200
    out: str = "runs"

    @property
    def use_replay(self) -> bool:
        return self.method in ("replay_only", "proposed")

    @property
    def effective_gamma(self) -> float:
        return self.gamma if self.method in ("reg_only", "proposed") else 0.0

    def with_overrides(self, **kw) -> "RunConfig":
        cfg = replace(self, **{k: v for k, v in kw.items() if v is not None})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        errs = []
        if self.mode not in MODES:
            errs.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.method not in METHODS:
            errs.append(f"method must be one of {METHODS}, got {self.method!r}")
        if self.batch != 1:
            errs.append("batch must be 1 (online learning is per-sample)")
        if self.width % 8 or self.height % 8:
            errs.append("width and height must be multiples of 8")
        if self.replay_capacity < 1:
            errs.append("replay_capacity must be >= 1")
        if self.replay_reg not in ("last_online", "off"):
            errs.append("replay_reg must be last_online or off")
        if self.online_distribution not in ("A", "B"):
            errs.append("online_distribution must be A or B")
        if self.frames_per_domain < 20:
            errs.append("frames_per_domain must be >= 20")
        for k in ("lr", "eps", "alpha_l"):
            if getattr(self, k) <= 0:
                errs.append(f"{k} must be positive")
        for k in ("gamma", "beta_p", "beta_ss", "beta_s"):
            if getattr(self, k) < 0:
                errs.append(f"{k} must be non-negative")
        if self.eval_every < 1 or self.checkpoint_every < 1 or self.pretrain_epochs < 1:
            errs.append("eval_every, checkpoint_every and pretrain_epochs must be >= 1")
        if errs:
            raise ConfigError("; ".join(errs))

    def deviations(self) -> Dict[str, dict]:
        """Every value that differs from the defaults, plus fixed scale substitutions."""
        base = RunConfig()
        out = {}
        for f in fields(self):
            if f.name in ("seed", "out", "method", "mode"):
                continue
            if getattr(self, f.name) != getattr(base, f.name):
                out[f.name] = {"default": getattr(base, f.name), "value": getattr(self, f.name)}
        for k, ref in REFERENCE_SCALE.items():
            out.setdefault(f"resolution.{k}", {"reference": ref, "value": getattr(self, k)})
        out["replay_capacity.units"] = {"reference": "1.5GB byte budget", "value": "item count"}
        return out

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.replace(",", " ").split())
    return raw


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    base = base or RunConfig()
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    values, unknown = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            unknown.append(key)
            continue
        try:
            val = _coerce(key, raw, known[key])
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from None
        if key == "method":
            val = METHOD_ALIASES.get(val, val)
        values[key] = val
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = replace(base, **values)
    cfg.validate()
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    lines: List[str] = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
