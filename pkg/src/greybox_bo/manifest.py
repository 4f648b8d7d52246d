"""Run manifests: a YAML mapping describing one batch of seeded trials.

See ``docs/manifest.md`` for the grammar.  Trial ``k`` (0-based) uses seed
``seeds.base + k``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from . import registry
from .engine import Algorithm

SEED_RULE = "base+trial_index"


@dataclass(frozen=True)
class RunManifest:
    problem_id: str
    algorithms: tuple
    trials: int = 1
    iterations: int = 10
    seed_base: int = 0
    kappa: float = 2.0
    mc_samples: int = 100
    af_starts: int = 50
    init_points: int = 2
    init_rule: str | None = None
    gp_restarts: int = 2
    f_star: float | None = None
    output_dir: str = "out"
    dump_state: bool = False
    dump_ledger: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        registry.get(self.problem_id)
        algos = tuple(Algorithm(a).value for a in self.algorithms)
        if not algos:
            raise ValueError("manifest lists no algorithms")
        if len(set(algos)) != len(algos):
            raise ValueError("manifest lists an algorithm twice")
        object.__setattr__(self, "algorithms", algos)
        if self.trials < 1 or self.iterations < 1:
            raise ValueError("trials and iterations must be at least 1")
        if self.init_points < 2:
            raise ValueError("need at least two initial points")
        if self.mc_samples < 2 or self.af_starts < 1:
            raise ValueError("mc_samples must be >= 2 and af_starts >= 1")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.init_rule is not None and self.init_rule not in registry.INIT_RULES:
            raise ValueError(f"unknown init rule {self.init_rule!r}")
        if self.f_star is not None and float(self.f_star) == 0.0:
            raise ValueError("f_star = 0 makes relative regret undefined")

    def seed(self, trial_index: int) -> int:
        return self.seed_base + trial_index

    @property
    def resolved_init_rule(self) -> str:
        return self.init_rule or registry.get(self.problem_id).init_rule

    @property
    def resolved_f_star(self):
        return self.f_star if self.f_star is not None else registry.get(self.problem_id).f_star()

    def init_points_for(self, problem, trial_index: int):
        rule = registry.INIT_RULES[self.resolved_init_rule]
        return rule(problem, self.init_points, trial_index, self.seed(trial_index))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        out = {
            "problem_id": d.pop("problem_id"),
            "algorithms": list(d.pop("algorithms")),
            "trials": d.pop("trials"),
            "iterations": d.pop("iterations"),
            "seeds": {"base": d.pop("seed_base"), "rule": SEED_RULE},
            "init": {"points": d.pop("init_points"), "rule": d.pop("init_rule")},
            "output_dir": d.pop("output_dir"),
        }
        out.update(d)
        if self.extra:
            out["extra"] = dict(self.extra)
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        seeds = d.pop("seeds", {}) or {}
        if isinstance(seeds, int):
            seeds = {"base": seeds}
        rule = seeds.get("rule", SEED_RULE)
        if rule != SEED_RULE:
            raise ValueError(f"unsupported seed rule {rule!r}; only {SEED_RULE!r}")
        init = d.pop("init", {}) or {}
        known = {f for f in cls.__dataclass_fields__} - {"seed_base", "init_points", "init_rule"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        if "problem_id" not in d or "algorithms" not in d:
            raise ValueError("manifest needs problem_id and algorithms")
        return cls(
            seed_base=int(seeds.get("base", 0)),
            init_points=int(init.get("points", 2)),
            init_rule=init.get("rule"),
            **d,
        )

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: manifest must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def loads(cls, text: str) -> "RunManifest":
        return cls.from_dict(yaml.safe_load(text))


def shipped_manifest(name: str) -> Path:
    """Path of a manifest bundled with the package (``chemproc_25x100`` etc.)."""
    from importlib import resources
    p = resources.files("greybox_bo").joinpath(f"manifests/{name}.yaml")
    return Path(str(p))
