"""Run configuration: YAML parsing, strict validation, default resolution.

Unknown keys are rejected with their key path and line number.  A resolved
copy of the config (all defaults expanded) is written next to every run's
outputs so results are reproducible from that file alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import yaml

from .augment import FLIP_MODES, TRANSFORM_NAMES, AugmentPolicy
from .data import SyntheticSpec
from .errors import ConfigError
from .models import FEATURE_MODES
from .pipeline import STRATEGIES, STRATEGY_ALIASES, TrainConfig


def _line_map(text: str) -> dict[tuple[str, ...], int]:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    lines: dict[tuple[str, ...], int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                sub = path + (str(key_node.value),)
                lines[sub] = key_node.start_mark.line + 1
                walk(value_node, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                walk(item, path + (str(i),))

    if root is not None:
        walk(root, ())
    return lines


class _Checker:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, path: tuple[str, ...], message: str):
        line = self.lines.get(path)
        where = ".".join(path) if path else "<root>"
        suffix = f" (line {line})" if line else ""
        raise ConfigError(f"{where}{suffix}: {message}")

    def mapping(self, value, path, allowed: set[str]) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, f"expected a mapping, got {type(value).__name__}")
        for key in value:
            if key not in allowed:
                self.fail(path + (str(key),), f"unknown key {key!r}")
        return value

    def typed(self, section, path, key, kinds, default=None, required=False):
        if key not in section or section[key] is None:
            if required:
                self.fail(path + (key,), "required key is missing")
            return default
        value = section[key]
        if kinds is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kinds is int and isinstance(value, bool):
            self.fail(path + (key,), "expected an integer, got a boolean")
        if not isinstance(value, kinds):
            expect = kinds.__name__ if isinstance(kinds, type) else str(kinds)
            self.fail(
                path + (key,),
                f"expected {expect}, got {type(value).__name__} ({value!r})",
            )
        return value

    def choice(self, section, path, key, options, default=None):
        value = self.typed(section, path, key, str, default=default)
        if value is not None and value not in options:
            self.fail(path + (key,), f"must be one of {sorted(options)}, got {value!r}")
        return value


@dataclass
class RunConfig:
    """Validated, fully resolved run configuration."""

    resolved: dict
    source_path: str

    @property
    def seed(self) -> int:
        return self.resolved["seed"]

    @property
    def out_dir(self) -> str:
        return self.resolved["out_dir"]

    def fingerprint(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def synthetic_spec(self) -> SyntheticSpec | None:
        syn = self.resolved["data"].get("synthetic")
        if syn is None:
            return None
        return SyntheticSpec(
            num_classes=syn["num_classes"],
            frames=syn["frames"],
            channels=syn["channels"],
            counts=tuple(syn["counts"]) if syn.get("counts") else None,
            separability=syn["separability"],
            noise_std=syn["noise_std"],
            seed=syn["seed"],
        )

    def augment_policy(self) -> AugmentPolicy | None:
        aug = self.resolved.get("augment")
        if aug is None:
            return None
        return AugmentPolicy(
            oversample_factors={int(k): float(v) for k, v in aug["oversample_factors"].items()},
            transforms=tuple(aug["transforms"]),
            jitter_ptp_fraction=aug["jitter_ptp_fraction"],
            scale_low=aug["scale_low"],
            scale_high=aug["scale_high"],
            shift_units=aug["shift_units"],
            permute_segments=aug["permute_segments"],
            flip_mode=aug["flip_mode"],
            seed=aug["seed"],
        )

    def train_config(self, strategy=None, encoder=None, features=None) -> TrainConfig:
        train = self.resolved["train"]
        model = self.resolved["model"]
        opt = train["optimizer"]
        name = strategy or train["strategy"]
        name = STRATEGY_ALIASES.get(name, name)
        # attach the policy only where the strategy wants one
        policy = self.augment_policy() if name in STRATEGIES and STRATEGIES[name][1] else None
        cfg = TrainConfig(
            strategy=name,
            encoder=encoder or model["encoder"],
            features=features or train["features"],
            num_classes=self.resolved["data"]["num_classes"],
            temperature=train["temperature"],
            epochs_phase1=train["epochs_phase1"],
            epochs_phase2=train["epochs_phase2"],
            batch_size=train["batch_size"],
            optimizer=opt["kind"],
            learning_rate=opt["learning_rate"],
            beta1=opt["beta1"],
            beta2=opt["beta2"],
            epsilon=opt["epsilon"],
            seed=self.seed,
            augment=policy,
            lstm_hidden=model["lstm"]["hidden"],
            lstm_layers=model["lstm"]["layers"],
            tcn_levels=model["tcn"]["levels"],
            tcn_hidden=model["tcn"]["hidden"],
            tcn_kernel=model["tcn"]["kernel"],
            tcn_dropout=model["tcn"]["dropout"],
            pool=model["pool"],
            head_hidden=model["head_hidden"],
            ordinal_shared_encoder=train["ordinal_shared_encoder"],
        )
        return cfg

    def ablate_configs(self) -> list[TrainConfig]:
        axes = self.resolved["ablate"]
        configs = []
        for features in axes["features"]:
            for encoder in axes["encoders"]:
                for strategy in axes["strategies"]:
                    configs.append(
                        self.train_config(
                            strategy=strategy, encoder=encoder, features=features
                        )
                    )
        return configs


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    """Load, validate, and resolve a YAML run config.

    ``overrides`` may replace ``seed`` and ``out_dir`` (the CLI flags).
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    check = _Checker(_line_map(text))
    check.mapping(raw, (), {"seed", "out_dir", "data", "augment", "model", "train",
                            "ablate", "eval"})

    resolved: dict = {}
    resolved["seed"] = check.typed(raw, (), "seed", int, default=0)
    resolved["out_dir"] = check.typed(raw, (), "out_dir", str, default="runs/out")
    if overrides:
        if overrides.get("seed") is not None:
            resolved["seed"] = int(overrides["seed"])
        if overrides.get("out_dir") is not None:
            resolved["out_dir"] = str(overrides["out_dir"])

    resolved["data"] = _resolve_data(check, raw.get("data"), resolved["seed"])
    resolved["augment"] = _resolve_augment(check, raw.get("augment"), resolved["seed"])
    resolved["model"] = _resolve_model(check, raw.get("model"))
    resolved["train"] = _resolve_train(check, raw.get("train"))
    resolved["ablate"] = _resolve_ablate(check, raw.get("ablate"), resolved)
    resolved["eval"] = _resolve_eval(check, raw.get("eval"))

    rc = RunConfig(resolved=resolved, source_path=str(path))
    # surface strategy/augment incompatibilities at parse time
    rc.train_config()
    return rc


def _resolve_data(check: _Checker, section, run_seed: int) -> dict:
    path = ("data",)
    section = check.mapping(section, path, {
        "synthetic", "features_csv", "labels_csv", "num_classes",
        "frame_stride", "split_fractions", "split_seed",
    })
    out: dict = {}
    out["num_classes"] = check.typed(section, path, "num_classes", int, default=4)
    out["frame_stride"] = check.typed(section, path, "frame_stride", int, default=1)
    fractions = section.get("split_fractions", [0.7, 0.1, 0.2])
    if not isinstance(fractions, list) or len(fractions) != 3:
        check.fail(path + ("split_fractions",), "expected a list of 3 fractions")
    out["split_fractions"] = [float(f) for f in fractions]
    out["split_seed"] = check.typed(section, path, "split_seed", int, default=run_seed)

    syn = section.get("synthetic")
    features_csv = check.typed(section, path, "features_csv", str)
    labels_csv = check.typed(section, path, "labels_csv", str)
    if syn is not None and features_csv is not None:
        check.fail(path, "give either a synthetic spec or CSV paths, not both")
    if syn is None and (features_csv is None) != (labels_csv is None):
        check.fail(path, "features_csv and labels_csv must be given together")
    out["features_csv"] = features_csv
    out["labels_csv"] = labels_csv

    if syn is not None:
        spath = path + ("synthetic",)
        syn = check.mapping(syn, spath, {
            "num_classes", "frames", "channels", "counts",
            "separability", "noise_std", "seed",
        })
        counts = syn.get("counts")
        if counts is not None and not isinstance(counts, list):
            check.fail(spath + ("counts",), "expected a list of per-class counts")
        out["synthetic"] = {
            "num_classes": check.typed(syn, spath, "num_classes", int,
                                       default=out["num_classes"]),
            "frames": check.typed(syn, spath, "frames", int, default=50),
            "channels": check.typed(syn, spath, "channels", int, default=46),
            "counts": [int(c) for c in counts] if counts else None,
            "separability": check.typed(syn, spath, "separability", float, default=1.0),
            "noise_std": check.typed(syn, spath, "noise_std", float, default=1.0),
            "seed": check.typed(syn, spath, "seed", int, default=run_seed),
        }
        out["num_classes"] = out["synthetic"]["num_classes"]
    else:
        out["synthetic"] = None
    return out


def _resolve_augment(check: _Checker, section, run_seed: int) -> dict | None:
    if section is None:
        return None
    path = ("augment",)
    section = check.mapping(section, path, {
        "oversample_factors", "transforms", "jitter_ptp_fraction", "scale_low",
        "scale_high", "shift_units", "permute_segments", "flip_mode", "seed",
    })
    factors = section.get("oversample_factors", {0: 10.0, 1: 10.0, 2: 1.5, 3: 1.5})
    if not isinstance(factors, dict):
        check.fail(path + ("oversample_factors",), "expected a class → factor mapping")
    transforms = section.get("transforms", list(TRANSFORM_NAMES))
    if not isinstance(transforms, list):
        check.fail(path + ("transforms",), "expected a list of transform names")
    for i, name in enumerate(transforms):
        if name not in TRANSFORM_NAMES:
            check.fail(path + ("transforms", str(i)),
                       f"unknown transform {name!r}; known: {list(TRANSFORM_NAMES)}")
    return {
        "oversample_factors": {int(k): float(v) for k, v in factors.items()},
        "transforms": list(transforms),
        "jitter_ptp_fraction": check.typed(section, path, "jitter_ptp_fraction",
                                           float, default=0.1),
        "scale_low": check.typed(section, path, "scale_low", float, default=0.75),
        "scale_high": check.typed(section, path, "scale_high", float, default=1.25),
        "shift_units": check.typed(section, path, "shift_units", int, default=5),
        "permute_segments": check.typed(section, path, "permute_segments", int, default=4),
        "flip_mode": check.choice(section, path, "flip_mode", FLIP_MODES,
                                  default="time_reverse"),
        "seed": check.typed(section, path, "seed", int, default=run_seed),
    }


def _resolve_model(check: _Checker, section) -> dict:
    path = ("model",)
    section = check.mapping(section, path, {"encoder", "pool", "head_hidden", "lstm", "tcn"})
    lstm = check.mapping(section.get("lstm"), path + ("lstm",), {"layers", "hidden"})
    tcn = check.mapping(section.get("tcn"), path + ("tcn",),
                        {"levels", "hidden", "kernel", "dropout"})
    return {
        "encoder": check.choice(section, path, "encoder", ("lstm", "tcn"), default="tcn"),
        "pool": check.choice(section, path, "pool", ("last", "mean"), default="last"),
        "head_hidden": check.typed(section, path, "head_hidden", int, default=128),
        "lstm": {
            "layers": check.typed(lstm, path + ("lstm",), "layers", int, default=2),
            "hidden": check.typed(lstm, path + ("lstm",), "hidden", int, default=256),
        },
        "tcn": {
            "levels": check.typed(tcn, path + ("tcn",), "levels", int, default=8),
            "hidden": check.typed(tcn, path + ("tcn",), "hidden", int, default=256),
            "kernel": check.typed(tcn, path + ("tcn",), "kernel", int, default=16),
            "dropout": check.typed(tcn, path + ("tcn",), "dropout", float, default=0.1),
        },
    }


def _resolve_train(check: _Checker, section) -> dict:
    path = ("train",)
    section = check.mapping(section, path, {
        "strategy", "features", "temperature", "batch_size", "epochs_phase1",
        "epochs_phase2", "ordinal_shared_encoder", "optimizer",
    })
    opt = check.mapping(section.get("optimizer"), path + ("optimizer",),
                        {"kind", "learning_rate", "beta1", "beta2", "epsilon"})
    strategies = set(STRATEGIES) | set(STRATEGY_ALIASES)
    return {
        "strategy": check.choice(section, path, "strategy", strategies, default="a"),
        "features": check.choice(section, path, "features", FEATURE_MODES, default="direct"),
        "temperature": check.typed(section, path, "temperature", float, default=0.1),
        "batch_size": check.typed(section, path, "batch_size", int, default=32),
        "epochs_phase1": check.typed(section, path, "epochs_phase1", int, default=100),
        "epochs_phase2": check.typed(section, path, "epochs_phase2", int, default=50),
        "ordinal_shared_encoder": check.typed(section, path, "ordinal_shared_encoder",
                                              bool, default=False),
        "optimizer": {
            "kind": check.choice(opt, path + ("optimizer",), "kind", ("sgd", "adam"),
                                 default="adam"),
            "learning_rate": check.typed(opt, path + ("optimizer",), "learning_rate",
                                         float, default=1e-3),
            "beta1": check.typed(opt, path + ("optimizer",), "beta1", float, default=0.9),
            "beta2": check.typed(opt, path + ("optimizer",), "beta2", float, default=0.999),
            "epsilon": check.typed(opt, path + ("optimizer",), "epsilon", float, default=1e-8),
        },
    }


def _resolve_ablate(check: _Checker, section, resolved: dict) -> dict:
    path = ("ablate",)
    section = check.mapping(section, path, {"encoders", "strategies", "features"})
    encoders = section.get("encoders", [resolved["model"]["encoder"]])
    strategies = section.get("strategies", [resolved["train"]["strategy"]])
    features = section.get("features", [resolved["train"]["features"]])
    for key, values, known in (
        ("encoders", encoders, {"lstm", "tcn"}),
        ("strategies", strategies, set(STRATEGIES) | set(STRATEGY_ALIASES)),
        ("features", features, set(FEATURE_MODES)),
    ):
        if not isinstance(values, list) or not values:
            check.fail(path + (key,), "expected a non-empty list")
        for i, v in enumerate(values):
            if v not in known:
                check.fail(path + (key, str(i)), f"unknown value {v!r}")
    return {"encoders": list(encoders), "strategies": list(strategies),
            "features": list(features)}


def _resolve_eval(check: _Checker, section) -> dict:
    path = ("eval",)
    section = check.mapping(section, path, {"checkpoint"})
    return {"checkpoint": check.typed(section, path, "checkpoint", str)}


def dump_resolved(rc: RunConfig, target_path) -> None:
    with open(target_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(rc.resolved, fh, sort_keys=True)
