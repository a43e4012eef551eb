"""Sectioned key=value run configuration.

The format is deliberately tiny: ``[section]`` headers, ``key = value``
lines, ``#`` comments, blank lines.  Unknown sections or keys are rejected
with the offending line number.  Every run can echo its resolved config,
including all defaults that were applied, next to its outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _int_pair(s: str) -> tuple[int, int]:
    parts = _int_list(s)
    if len(parts) != 2:
        raise ValueError(f"need exactly two integers: {s!r}")
    return (parts[0], parts[1])


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0),
        "out": (str, "out"),
    },
    "corpus": {
        "source": (str, "synth"),
        "path": (str, ""),
        "n_docs": (int, 500),
        "vocab_size": (int, 120),
        "sentences_range": (_int_pair, (9, 12)),
        "tokens_range": (_int_pair, (6, 10)),
        "summary_range": (_int_pair, (2, 2)),
        "topic_size": (int, 12),
        "salient_fraction": (float, 0.5),
        "topic_density": (float, 0.9),
        "secondary_density": (float, 0.9),
        "filler_density": (float, 0.05),
        "redundancy_prob": (float, 0.9),
        "variant_overlap": (float, 0.85),
        "noise_rate": (float, 0.1),
        "size_by_length": (_bool, False),
        "holdout": (int, 100),
    },
    "encoder": {
        "d_model": (int, 64),
        "n_layers": (int, 1),
        "n_heads": (int, 4),
        "ffn_dim": (int, 128),
        "max_len": (int, 256),
        "use_positions": (_bool, True),
        "max_rel": (int, 16),
    },
    "candidates": {
        "n": (_int_list, (2, 3)),
        "n_prime": (int, 6),
    },
    "training": {
        "margin": (float, 0.01),
        "warmup_steps_bce": (int, 200),
        "combined_steps": (int, 1900),
        "batch_size": (int, 4),
        "discriminator": (str, "rouge12mean"),
        "rank_loss_normalize": (_bool, False),
        "margin_scaled_by_rank_gap": (_bool, False),
        "lr_warmup": (int, 200),
        "lr_scale": (float, 0.08),
        "label_max_sents": (int, 0),
        "checkpoint_every": (int, 0),
    },
    "abstractive": {
        "dec_layers": (int, 1),
        "dec_heads": (int, 4),
        "max_decode_len": (int, 12),
        "beam_size": (int, 8),
        "num_groups": (int, 8),
        "diversity_penalty": (float, 1.0),
        "warmup_steps_nll": (int, 300),
        "combined_steps": (int, 800),
        "batch_size": (int, 4),
        "lr_warmup": (int, 100),
        "lr_scale": (float, 0.1),
    },
    "bench": {
        "sizes": (_int_list, (4, 8, 16, 20, 32)),
        "batch_mode": (str, "one"),
        "repetitions": (int, 3),
        "warmup_batches": (int, 1),
        "cand_len_cap": (int, 300),
        "byte_budget_mb": (int, 64),
        "n_docs": (int, 32),
    },
    "viz": {
        "n": (_int_list, (2, 3)),
        "n_prime": (int, 6),
        "sample_docs": (int, 100),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def __post_init__(self):
        for section, keys in SCHEMA.items():
            self.values.setdefault(section, {})
            for key, (_, default) in keys.items():
                self.values[section].setdefault(key, default)

    def get(self, section: str, key: str):
        try:
            return self.values[section][key]
        except KeyError as e:
            raise ConfigError(f"unknown config entry {section}.{key}") from e

    def set(self, section: str, key: str, raw: str) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        parser = SCHEMA[section][key][0]
        try:
            self.values[section][key] = parser(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {section}.{key}: {e}") from e

    def resolved_text(self) -> str:
        """Full config with every applied default, suitable for re-parsing."""
        lines = []
        for section in SCHEMA:
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                v = self.values[section][key]
                if isinstance(v, tuple):
                    v = " ".join(str(x) for x in v)
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                lines.append(f"{key} = {v}")
            lines.append("")
        return "\n".join(lines)


def parse_config_text(text: str) -> RunConfig:
    cfg = RunConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}] at line {lineno}")
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value at line {lineno}")
        if section is None:
            raise ConfigError(f"key outside any section at line {lineno}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key} at line {lineno}")
        try:
            cfg.set(section, key, value.strip())
        except ConfigError as e:
            raise ConfigError(f"{e} at line {lineno}") from e
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read())


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings, e.g. from repeated --set flags."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        dotted, _, value = item.partition("=")
        section, _, key = dotted.strip().partition(".")
        cfg.set(section.strip(), key.strip(), value.strip())
    return cfg
