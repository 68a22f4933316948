"""Plain-text key=value configuration for the pipeline.

Sections: [data], [model], [train], [reference], [mask], [interpret],
[permute]. Every key has a default; unknown sections or keys are an error
listing the offenders, never silently ignored. DEFAULTS below is the single
source of truth and doubles as documentation.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Any

from .interpretation import InterpretConfig
from .models import NEURAL_VARIANTS, ModelConfig
from .reference import MODES as REFERENCE_MODES
from .reference import ReferenceSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fractions(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"need three comma-separated fractions, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _opt_int(text: str):
    return None if not text.strip() else int(text)


def _opt_float(text: str):
    return None if not text.strip() else float(text)


def _choice(*allowed: str):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in allowed:
            raise ValueError(f"{t!r} not one of {allowed}")
        return t
    return parse


# key -> (parser, default, help)
DEFAULTS: dict[str, dict[str, tuple[Any, Any, str]]] = {
    "data": {
        "path": (str, "", "CSV file with the series (required by prepare/train)"),
        "has_header": (_bool, False, "first row holds feature names"),
        "timestamp_col": (_opt_int, None, "0-based column to drop (blank: none)"),
        "missing_policy": (_choice("reject", "forward_fill"), "reject",
                           "what to do with missing cells"),
        "fractions": (_fractions, (0.6, 0.2, 0.2),
                      "train,val,test row fractions (sum to 1)"),
        "window": (int, 16, "window length w"),
        "horizon": (int, 3, "forecast horizon tau"),
        "sample_period": (str, "", "optional sampling-rate label, e.g. 1h"),
    },
    "model": {
        "variant": (_choice(*NEURAL_VARIANTS), "mlp", "neural component"),
        "ar_order": (int, 8, "AR order p (window must cover p+1 rows)"),
        "mlp_hidden": (int, 64, "mlp hidden width"),
        "cnn_channels": (int, 16, "cnn channels per layer"),
        "cnn_kernel": (int, 3, "cnn kernel length"),
        "cnn_layers": (int, 2, "cnn layer count"),
        "gru_hidden": (int, 32, "gru hidden size"),
        "attn_dim": (int, 32, "attention model dim"),
        "attn_ff": (int, 64, "attention feed-forward width"),
    },
    "train": {
        "lr": (float, 1e-4, "learning rate"),
        "weight_decay": (float, 1e-3, "decoupled decay on weight matrices"),
        "lambda1": (float, 1e-3, "mask size penalty weight"),
        "lambda2": (float, 1e-3, "mask smoothness penalty weight"),
        "p0": (int, 2, "mask norm order (1, 2 or 3)"),
        "batch_size": (int, 64, "minibatch size"),
        "epochs": (int, 100, "max epochs"),
        "seed": (int, 0, "training seed"),
        "mask_enabled": (_bool, True, "train with the shared augmentation mask"),
        "ar_enabled": (_bool, True, "include the AR component"),
        "size_penalty_complement": (_bool, True,
                                    "use ||1-M||_1 instead of ||M||_p0"),
        "feature_axis_smoothness": (_bool, True,
                                    "include the feature-axis smoothness term"),
        "patience": (int, 10, "early-stop patience on val RSE (0: disabled)"),
        "loss_kind": (_choice("mse"), "mse", "forecast loss (reserved hook)"),
    },
    "reference": {
        "mode": (_choice(*REFERENCE_MODES), "noise", "training reference mode"),
        "sigma1": (float, 0.5, "noise std (scaled units)"),
        "sigma2": (float, 2.0, "blur std (time steps)"),
        "seed": (int, 0, "reference noise seed"),
    },
    "mask": {
        "init_logit": (float, 0.0, "initial mask logit (0 -> value 0.5)"),
    },
    "interpret": {
        "steps": (int, 500, "optimization steps per sample"),
        "lr": (float, 1e-2, "mask learning rate"),
        "lambda1": (float, 1e-3, "size penalty weight"),
        "lambda2": (float, 1e-3, "smoothness penalty weight"),
        "p0": (int, 2, "mask norm order"),
        "feature_axis_smoothness": (_bool, True,
                                    "false for exchangeable features"),
        "against": (_choice("target", "self"), "target",
                    "maximize error vs true target or own clean forecast"),
        "seed": (int, 0, "interpretation seed"),
        "samples": (int, 5, "how many test windows to explain"),
        "reference_mode": (_choice(*REFERENCE_MODES), "blur",
                           "interpretation reference mode"),
        "reference_sigma1": (float, 0.5, "noise std for interpretation"),
        "reference_sigma2": (float, 2.0, "blur std for interpretation"),
    },
    "permute": {
        "cycle": (_bool, False, "closed tour instead of open path"),
        "aggregate": (_choice("mean"), "mean", "how to combine sample masks"),
        "psi0": (_opt_float, None, "start temperature (blank: mean distance)"),
        "psi_min": (_opt_float, None, "stop temperature (blank: 1e-3 * psi0)"),
        "alpha": (float, 0.95, "cooling factor"),
        "iters_per_temp": (_opt_int, None, "moves per temperature (blank: 20*D)"),
        "restarts": (int, 1, "independent seeded runs, best kept"),
        "seed": (int, 0, "annealing seed"),
    },
}


@dataclass
class PipelineConfig:
    raw: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.raw[section]

    def model_config(self) -> ModelConfig:
        m = self.raw["model"]
        return ModelConfig(variant=m["variant"],
                           ar_enabled=self.raw["train"]["ar_enabled"],
                           ar_order=m["ar_order"], mlp_hidden=m["mlp_hidden"],
                           cnn_channels=m["cnn_channels"],
                           cnn_kernel=m["cnn_kernel"], cnn_layers=m["cnn_layers"],
                           gru_hidden=m["gru_hidden"], attn_dim=m["attn_dim"],
                           attn_ff=m["attn_ff"])

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(lr=t["lr"], weight_decay=t["weight_decay"],
                           lambda1=t["lambda1"], lambda2=t["lambda2"],
                           p0=t["p0"], batch_size=t["batch_size"],
                           epochs=t["epochs"], seed=t["seed"],
                           mask_enabled=t["mask_enabled"],
                           ar_enabled=t["ar_enabled"],
                           size_penalty_complement=t["size_penalty_complement"],
                           feature_axis_smoothness=t["feature_axis_smoothness"],
                           patience=t["patience"] or None)

    def reference_spec(self) -> ReferenceSpec:
        r = self.raw["reference"]
        return ReferenceSpec(mode=r["mode"], sigma1=r["sigma1"],
                             sigma2=r["sigma2"], seed=r["seed"])

    def interpret_config(self) -> InterpretConfig:
        i = self.raw["interpret"]
        ref = ReferenceSpec(mode=i["reference_mode"],
                            sigma1=i["reference_sigma1"],
                            sigma2=i["reference_sigma2"], seed=i["seed"])
        return InterpretConfig(steps=i["steps"], lr=i["lr"],
                               lambda1=i["lambda1"], lambda2=i["lambda2"],
                               p0=i["p0"],
                               feature_axis_smoothness=i["feature_axis_smoothness"],
                               reference=ref, seed=i["seed"],
                               against=i["against"],
                               init_logit=self.raw["mask"]["init_logit"])

    def override_seed(self, seed: int) -> None:
        """--seed: one seed drives training, references, interpretation and
        annealing alike."""
        self.raw["train"]["seed"] = seed
        self.raw["reference"]["seed"] = seed
        self.raw["interpret"]["seed"] = seed
        self.raw["permute"]["seed"] = seed

    def echo(self) -> dict:
        return {section: dict(keys) for section, keys in self.raw.items()}


def default_config() -> PipelineConfig:
    raw = {section: {key: default for key, (_, default, _) in keys.items()}
           for section, keys in DEFAULTS.items()}
    return PipelineConfig(raw)


def load_config(path) -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}")

    unknown: list[str] = []
    cfg = default_config()
    for section in parser.sections():
        if section not in DEFAULTS:
            unknown.append(f"[{section}]")
            continue
        for key, text in parser.items(section):
            if key not in DEFAULTS[section]:
                unknown.append(f"{section}.{key}")
                continue
            parse = DEFAULTS[section][key][0]
            try:
                cfg.raw[section][key] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"{path}: {section}.{key}: {exc}")
    if unknown:
        raise ConfigError(
            f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def render_default_config() -> str:
    """INI text with every key at its default, help as comments."""
    lines: list[str] = []
    for section, keys in DEFAULTS.items():
        lines.append(f"[{section}]")
        for key, (_, default, help_text) in keys.items():
            if isinstance(default, tuple):
                value = ",".join(str(v) for v in default)
            elif default is None:
                value = ""
            elif isinstance(default, bool):
                value = "true" if default else "false"
            else:
                value = str(default)
            lines.append(f"# {help_text}")
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
