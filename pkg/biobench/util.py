import logging
import os
import tomllib
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from biobench.errors import ConfigurationError
from biobench.models import ExperimentConfig, NetworkConfig, UpdateRule

load_dotenv()

PRESET_DIR = Path(__file__).parent / "presets"


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def get_data_dir(override: Path | str | None = None) -> Path:
    """``--data-dir`` first, then ``BIOBENCH_DATA_DIR``, then ``./data``."""
    if override:
        return Path(override)
    return Path(os.getenv("BIOBENCH_DATA_DIR", "data"))


def get_thread_count(override: int | None = None) -> int:
    if override is not None:
        if override < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {override}")
        return override
    return os.cpu_count() or 1


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.toml"))


def resolve_experiment_path(path_or_preset: str | Path) -> Path:
    """A path to a TOML file, or the name of a bundled preset."""
    path = Path(path_or_preset)
    if path.is_file():
        return path
    preset = PRESET_DIR / f"{path_or_preset}.toml"
    if preset.is_file():
        return preset
    raise ConfigurationError(
        f"{path_or_preset}: no such file or preset (presets: {', '.join(preset_names())})"
    )


def load_experiment(path_or_preset: str | Path) -> ExperimentConfig:
    """Parse and validate an experiment file.

    Raises ``tomllib.TOMLDecodeError`` (which carries line and column) and
    ``pydantic.ValidationError`` unchanged so the CLI can report them.
    """
    path = resolve_experiment_path(path_or_preset)
    with path.open("rb") as f:
        document = tomllib.load(f)
    return ExperimentConfig.model_validate(document)


def get_network(
    rule: UpdateRule,
    config: NetworkConfig,
    input_shape: tuple[int, ...],
    classes: int,
    seed: int,
):
    """Conv stack with a dense linear head for gradient rules, a ridge head for Hebbian ones."""
    from biobench.network import build_network, conv_stack_specs

    dtype = np.dtype(config.dtype).type
    specs = conv_stack_specs(
        config.conv_channels,
        classes=None if rule.is_hebbian else classes,
        kernel=config.kernel,
        stride=config.stride,
        padding=config.padding,
        pool=config.pool,
        pool_stride=config.pool_stride,
        activation_kind=config.hebbian_activation if rule.is_hebbian else config.activation,
    )
    head = "ridge" if rule.is_hebbian else "linear"
    return build_network(specs, head, seed, input_shape, gain=config.gain, dtype=dtype)


def get_credit_rule(rule: UpdateRule, net, seed: int):
    """The gradient-family rule object for ``rule.kind``, feedback drawn from ``seed``."""
    if rule.kind == "bp":
        from biobench.rules.backprop import BackpropRule

        return BackpropRule()
    if rule.kind == "fa":
        from biobench.credit import draw_feedback
        from biobench.rules.feedback import FeedbackAlignmentRule

        return FeedbackAlignmentRule(draw_feedback(net, "fa", seed))
    if rule.kind == "dfa":
        from biobench.credit import draw_feedback
        from biobench.rules.feedback import DirectFeedbackAlignmentRule

        return DirectFeedbackAlignmentRule(draw_feedback(net, "dfa", seed))
    raise ConfigurationError(f"{rule.kind!r} has no backward pass; Hebbian rules train layer-wise")


def get_datasets(
    experiment: ExperimentConfig,
    data_dir: Path | str | None = None,
    synthetic: bool = False,
    seed: int = 0,
):
    """Train and test splits for an experiment; ``synthetic`` forces the shapes generator."""
    from biobench.data import load_cifar, make_shapes

    if synthetic or experiment.dataset == "synthetic":
        s = experiment.synthetic
        return make_shapes(s.per_class_train, s.per_class_test, seed=seed, size=s.size)
    return load_cifar(get_data_dir(data_dir), experiment.dataset)
