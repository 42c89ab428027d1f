"""Flat key=value run configuration with section-prefixed keys.

The defaults reproduce the published hyperparameter decisions (batch 64,
L2 0.01, learning rates 1e-3/4e-4, truncation ranks 3x5x3x3, boosted-tree
settings inside the documented tuning ranges). Unknown keys are rejected.
The HURICAST_SEED environment variable overrides the configured seed.
"""

from __future__ import annotations

import hashlib
import os

from .errors import ConfigError
from .gbt import GbtConfig
from .neural import (CnnEncoderConfig, GruDecoderConfig, TrainConfig,
                     TransformerDecoderConfig)
from .synthetic import SyntheticSpec

SEED_ENV_VAR = "HURICAST_SEED"


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in str(text).split(","))


# key -> (coercion, default)
SCHEMA: dict[str, tuple] = {
    "run.variant": (int, 1),
    "run.seed": (int, 7),
    "split.train_start": (int, 1980),
    "split.train_end": (int, 2011),
    "split.val_start": (int, 2012),
    "split.val_end": (int, 2015),
    "split.test_start": (int, 2016),
    "split.test_end": (int, 2019),
    "neural.conv_channels": (_int_tuple, (32, 64, 128)),
    "neural.dense_hidden": (int, 128),
    "neural.embed_dim": (int, 128),
    "neural.gru_hidden": (int, 128),
    "neural.model_dim": (int, 142),
    "neural.heads": (int, 2),
    "neural.layers": (int, 2),
    "neural.ff_dim": (int, 128),
    "neural.lr": (float, 0.0),  # 0: pick 1e-3 intensity / 4e-4 track
    "neural.batch_size": (int, 64),
    "neural.l2": (float, 0.01),
    "neural.max_epochs": (int, 30),
    "neural.patience": (int, 10),
    "neural.objective": (str, "intensity"),
    "gbt.max_depth": (int, 6),
    "gbt.n_estimators": (int, 200),
    "gbt.learning_rate": (float, 0.1),
    "gbt.subsample": (float, 0.8),
    "gbt.colsample_bytree": (float, 1.0),
    "gbt.min_child_weight": (float, 1.0),
    "gbt.reg_lambda": (float, 1.0),
    "tucker.ranks": (_int_tuple, (3, 5, 3, 3)),
    "synth.storms": (int, 200),
    "synth.steps": (int, 40),
    "synth.signal": (str, "both"),
    "synth.noise_sd": (float, 2.0),
}


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            self.set(key, value)
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            self.set("run.seed", env_seed)

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        coerce = SCHEMA[key][0]
        try:
            self.values[key] = coerce(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})")

    def get(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        config = cls()
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected key=value, got {raw!r}")
                key, _, value = line.partition("=")
                config.set(key.strip(), value.strip())
        # file values must not silently lose to a pre-existing env override
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            config.set("run.seed", env_seed)
        return config

    def effective_text(self) -> str:
        lines = [f"{key}={self._format(self.values[key])}" for key in sorted(SCHEMA)]
        return "\n".join(lines) + "\n"

    @staticmethod
    def _format(value) -> str:
        if isinstance(value, tuple):
            return ",".join(str(v) for v in value)
        return str(value)

    def digest(self) -> str:
        return hashlib.sha256(self.effective_text().encode()).hexdigest()[:16]

    def write_effective(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.effective_text())

    # ---- typed views -----------------------------------------------------

    def split_years(self) -> dict:
        return {
            "train_years": (self.get("split.train_start"), self.get("split.train_end")),
            "val_years": (self.get("split.val_start"), self.get("split.val_end")),
            "test_years": (self.get("split.test_start"), self.get("split.test_end")),
        }

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            storms=self.get("synth.storms"),
            steps=self.get("synth.steps"),
            signal=self.get("synth.signal"),
            noise_sd=self.get("synth.noise_sd"),
            seed=self.get("run.seed"),
        )

    def pipeline_config(self, variant: int | None = None):
        from .pipeline import PipelineConfig  # local import to avoid a cycle

        seed = self.get("run.seed")
        lr = self.get("neural.lr")
        return PipelineConfig(
            variant=self.get("run.variant") if variant is None else variant,
            seed=seed,
            gbt=GbtConfig(
                max_depth=self.get("gbt.max_depth"),
                n_estimators=self.get("gbt.n_estimators"),
                learning_rate=self.get("gbt.learning_rate"),
                subsample=self.get("gbt.subsample"),
                colsample_bytree=self.get("gbt.colsample_bytree"),
                min_child_weight=self.get("gbt.min_child_weight"),
                reg_lambda=self.get("gbt.reg_lambda"),
                seed=seed,
            ),
            train=TrainConfig(
                lr=None if lr == 0.0 else lr,
                batch_size=self.get("neural.batch_size"),
                l2=self.get("neural.l2"),
                max_epochs=self.get("neural.max_epochs"),
                patience=self.get("neural.patience"),
                seed=seed,
            ),
            encoder=CnnEncoderConfig(
                conv_channels=self.get("neural.conv_channels"),
                dense_hidden=self.get("neural.dense_hidden"),
                embed_dim=self.get("neural.embed_dim"),
            ),
            gru=GruDecoderConfig(hidden=self.get("neural.gru_hidden")),
            transformer=TransformerDecoderConfig(
                model_dim=self.get("neural.model_dim"),
                layers=self.get("neural.layers"),
                heads=self.get("neural.heads"),
                ff_dim=self.get("neural.ff_dim"),
            ),
            tucker_ranks=self.get("tucker.ranks"),
            neural_objective=self.get("neural.objective"),
        )
