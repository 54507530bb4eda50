"""Run configuration, JSON round-tripping and the ablation presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from .diffusion import GaussianWorldPredictor, NoiseSchedule, linear_schedule
from .external import FilePredictor
from .guidance import GuidanceConfig, Sampler, Variant
from .losses import LossWeights

SCALE_WITH_REFERENCE = 12000.0
SCALE_DEFAULT = 4000.0
UNDERWATER_TLR = 1e-3


@dataclass(frozen=True)
class RunConfig:
    input: str = ""
    output: str = "out"
    reference: str | None = None
    pseudo_label_dir: str | None = None
    variant: str = Variant.X0_NATURAL.value
    sampler: str = Sampler.DDPM.value
    steps: int = 1000
    scale: float | None = None
    lambda1: float = 1.0
    lambda2: float = 0.005
    lambda3: float = 0.001
    lambda4: float = 1e-5
    tlr: float = 0.0
    seed: int = 0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    predictor: str = "gaussian:0,1"
    labeler: str = "dcp"
    resize: int = 256
    snapshot_stride: int = 0
    workers: int = 0
    grad_at_mean: bool = False
    shift_with_variance: bool = False
    figures: bool = True
    export_params: bool = False
    label: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def resolved_scale(self) -> float:
        if self.scale is not None:
            return float(self.scale)
        return SCALE_WITH_REFERENCE if self.reference else SCALE_DEFAULT

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end)

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(
            variant=Variant(self.variant),
            scale=self.resolved_scale(),
            weights=self.weights(),
            tlr=self.tlr,
            sampler=Sampler(self.sampler),
            steps=self.steps,
            seed=self.seed,
            grad_at_mean=self.grad_at_mean,
            shift_with_variance=self.shift_with_variance,
            snapshot_stride=self.snapshot_stride,
        )

    def make_predictor(self, sched: NoiseSchedule):
        kind, _, arg = self.predictor.partition(":")
        if kind == "gaussian":
            try:
                m, v = (float(p) for p in arg.split(","))
            except ValueError:
                raise ValueError(f"predictor must be gaussian:MEAN,VAR, got {self.predictor!r}") from None
            return GaussianWorldPredictor(m, v, sched)
        if kind == "file":
            pred = FilePredictor(arg)
            if pred.T != sched.T:
                raise ValueError(f"predictor file holds {pred.T} timesteps, schedule has {sched.T}")
            return pred
        raise ValueError(f"unknown predictor {self.predictor!r}; use gaussian:m,v or file:PATH")


PRESETS = ("guidance-variants", "loss-terms", "sampler-steps", "variance-shift")


def ablation_preset(name: str, base: RunConfig | None = None) -> list[RunConfig]:
    """Expand a named ablation into labelled configs sharing ``base``'s seed."""
    base = base or RunConfig()
    if name == "guidance-variants":
        # quality slots are off for this comparison
        b = replace(base, lambda3=0.0, lambda4=0.0, sampler="ddpm")
        return [
            replace(b, variant=v.value, tlr=UNDERWATER_TLR if v.underwater else 0.0, label=v.value)
            for v in Variant
        ]
    if name == "loss-terms":
        b = replace(base, variant=Variant.X0_NATURAL.value, tlr=0.0)
        d = base
        rows = [
            ("mae", dict(lambda1=0.0, lambda2=0.0, lambda3=0.0, lambda4=0.0)),
            ("+msssim", dict(lambda1=d.lambda1, lambda2=0.0, lambda3=0.0, lambda4=0.0)),
            ("+perceptual", dict(lambda1=d.lambda1, lambda2=d.lambda2, lambda3=0.0, lambda4=0.0)),
            ("+quality_a", dict(lambda1=d.lambda1, lambda2=d.lambda2, lambda3=d.lambda3, lambda4=0.0)),
            ("+quality_b", dict(lambda1=d.lambda1, lambda2=d.lambda2, lambda3=d.lambda3, lambda4=d.lambda4)),
        ]
        return [replace(b, label=label, **kw) for label, kw in rows]
    if name == "sampler-steps":
        runs = [("ddim", 25), ("ddim", 50), ("ddpm", 50), ("ddpm", 250), ("ddpm", 1000)]
        return [replace(base, sampler=s, steps=n, T=max(base.T, n), label=f"{s}-{n}") for s, n in runs]
    if name == "variance-shift":
        return [
            replace(base, sampler="ddpm", shift_with_variance=True, label="with-sigma"),
            replace(base, sampler="ddpm", shift_with_variance=False, label="without-sigma"),
        ]
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
