"""Flat ``key = value`` run configuration shared by every CLI subcommand.

Blank lines and ``#`` comments are ignored. Every key must appear in
``SCHEMA``; values are parsed to the schema type. A snapshot renders all
keys in sorted order so two runs with the same settings write the same bytes.
"""
from __future__ import annotations

from .errors import ConfigError
from .losses import NdaConfig
from .ssl import SslConfig
from .training import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _str(text: str) -> str:
    return text.strip()


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    # data; a negative data_seed derives one from seed
    "data_seed": (int, -1),
    "features": (_str, ""),
    "num_classes": (int, 4),
    "dim": (int, 8),
    "per_class": (int, 500),
    "spread": (float, 1.0),
    "sigma": (float, 1.0),
    "ood_shift": (float, 10.0),  # in units of sigma
    "test_fraction": (float, 0.8),
    "validation_fraction": (float, 0.2),  # share of the non-test pool
    # model
    "hidden_dims": (_int_list, (32,)),
    "latent_dim": (int, 16),
    # optimisation
    "epochs": (int, 60),
    "batch_size": (int, 32),
    "learning_rate": (float, 0.02),
    "momentum": (float, 0.9),
    "lr_decay": (float, 1.0),
    "lr_decay_every": (int, 0),
    # loss
    "alpha": (float, 1.0),
    "beta": (float, 1e-3),
    "gamma": (float, 1.0),
    "mean_loss": (_str, "l2"),
    "siamese": (_str, "margin"),
    "margin": (float, 1.0),
    "pair_fraction": (float, 0.5),
    "use_mean_loss": (_bool, True),
    "use_siamese": (_bool, True),
    "alternate": (_bool, False),
    # semi-supervised
    "labeled_fraction": (float, 0.1),
    "ssl_validation_fraction": (float, 0.1),
    "ssl_test_fraction": (float, 0.4),
    "ensemble_size": (int, 3),
    "threshold": (float, 0.95),
    "phase1_epochs": (int, 20),
    "phase2_epochs": (int, 20),
    "weak_noise": (float, 0.2),
    "strong_noise": (float, 0.5),
    "mask_fraction": (float, 0.25),
    "consistency_weight": (float, 1.0),
    "nda_phase2": (_bool, False),
    # evaluation
    "num_bins": (int, 15),
    "ridge": (float, 1e-6),
}


def defaults() -> dict:
    return {k: v for k, (_, v) in SCHEMA.items()}


def parse_value(key: str, text: str, where: str = ""):
    if key not in SCHEMA:
        raise ConfigError(f"{where}unknown config key {key!r}")
    parser = SCHEMA[key][0]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(f"{where}bad value for {key!r}: {text.strip()!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into a dict of overrides (only keys present)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source} line {lineno}: "
        if "=" not in line:
            raise ConfigError(f"{where}expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{where}duplicate key {key!r}")
        out[key] = parse_value(key, value, where)
    return out


def load_config(path=None, overrides=None) -> dict:
    """Defaults, then the file (if any), then ``overrides`` (already parsed)."""
    cfg = defaults()
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        cfg.update(parse_config_text(text, str(path)))
    if overrides:
        for key in overrides:
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
        cfg.update(overrides)
    return cfg


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def snapshot_text(cfg: dict) -> str:
    """Every key, sorted, in a form ``parse_config_text`` reads back unchanged."""
    return "".join(f"{k} = {_render(cfg[k])}\n" for k in sorted(cfg))


def nda_config(cfg: dict) -> NdaConfig:
    try:
        return NdaConfig(alpha=cfg["alpha"], beta=cfg["beta"], gamma=cfg["gamma"],
                         mean_loss=cfg["mean_loss"], siamese=cfg["siamese"], margin=cfg["margin"],
                         pair_fraction=cfg["pair_fraction"])
    except ValueError as exc:
        raise ConfigError(f"invalid loss settings: {exc}") from exc


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                           learning_rate=cfg["learning_rate"], momentum=cfg["momentum"],
                           lr_decay=cfg["lr_decay"], lr_decay_every=cfg["lr_decay_every"],
                           seed=cfg["seed"], nda=nda_config(cfg),
                           validation_fraction=min(cfg["validation_fraction"], 0.5),
                           use_mean_loss=cfg["use_mean_loss"], use_siamese=cfg["use_siamese"],
                           alternate=cfg["alternate"])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid training settings: {exc}") from exc


def ssl_config(cfg: dict) -> SslConfig:
    try:
        return SslConfig(labeled_fraction=cfg["labeled_fraction"],
                         validation_fraction=cfg["ssl_validation_fraction"],
                         test_fraction=cfg["ssl_test_fraction"], ensemble_size=cfg["ensemble_size"],
                         threshold=cfg["threshold"], phase1_epochs=cfg["phase1_epochs"],
                         phase2_epochs=cfg["phase2_epochs"], weak_noise=cfg["weak_noise"],
                         strong_noise=cfg["strong_noise"], mask_fraction=cfg["mask_fraction"],
                         consistency_weight=cfg["consistency_weight"], nda_phase2=cfg["nda_phase2"],
                         nda=nda_config(cfg), batch_size=cfg["batch_size"],
                         learning_rate=cfg["learning_rate"], momentum=cfg["momentum"],
                         hidden_dims=cfg["hidden_dims"], latent_dim=cfg["latent_dim"], seed=cfg["seed"])
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid semi-supervised settings: {exc}") from exc
