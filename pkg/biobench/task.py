"""Training runs

Each task owns one network and one configuration and is executed through its
`run()` method, which returns the finished ``RunRecord``. Gradient-family rules
(BP, FA, DFA) and the layer-wise Hebbian rules share the same record, the same
evaluation and the same divergence handling; they differ only in how an epoch
changes the weights.
"""

import logging
import time
from collections.abc import Iterator

import numpy as np

from biobench.credit import CreditRule, apply_updates, compute_updates, loss_grad_softmax_ce, one_hot
from biobench.data import Dataset, subset
from biobench.errors import ConfigurationError, NumericError
from biobench.models import RunRecord, TrainingConfig
from biobench.network import (
    Network,
    apply_masks,
    features,
    forward,
    install_masks,
    magnitude_prune,
    make_mask,
    measured_sparsity,
)
from biobench.noise import noise_splits
from biobench.numerics import make_rng, zca_apply, zca_fit
from biobench.rules.hebbian import decay_layer, hebbian_train_layer
from biobench.rules.ridge import ridge_fit, ridge_scores
from biobench.util import get_credit_rule, get_network

logger = logging.getLogger(__name__)

EVAL_BATCH = 500


# --- evaluation ---


def _with_bias_column(feats: np.ndarray) -> np.ndarray:
    return np.hstack([feats, np.ones((feats.shape[0], 1), dtype=feats.dtype)])


def readout_features(net: Network, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Flattened final-layer features with a constant 1 column appended."""
    dtype = net.params[net.parametric[0]].weights.dtype
    parts = [
        features(net, images[s : s + batch_size].astype(dtype, copy=False))
        for s in range(0, images.shape[0], batch_size)
    ]
    return _with_bias_column(np.concatenate(parts))


def predict(net: Network, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Top-1 class per sample; ties go to the lowest class index."""
    if net.head == "ridge":
        if net.readout is None:
            raise ConfigurationError("ridge head has not been fit")
        return ridge_scores(net.readout, readout_features(net, images, batch_size)).argmax(axis=1)
    dtype = net.params[net.parametric[0]].weights.dtype
    preds = []
    for s in range(0, images.shape[0], batch_size):
        scores, _ = forward(net, images[s : s + batch_size].astype(dtype, copy=False))
        preds.append(scores.argmax(axis=1))
    return np.concatenate(preds)


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    if labels.size == 0:
        raise ConfigurationError("cannot score an empty dataset")
    if predictions.shape != labels.shape:
        raise ConfigurationError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    return float(np.mean(predictions == labels))


def evaluate(net: Network, ds: Dataset) -> float:
    if len(ds) == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    return accuracy(predict(net, ds.images), ds.labels)


def fit_readout(net: Network, ds: Dataset, lam: float) -> None:
    net.readout = ridge_fit(readout_features(net, ds.images), one_hot(ds.labels, ds.class_count), lam)


# --- data preparation ---


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s : s + batch_size]


def prepare_data(config: TrainingConfig, train_ds: Dataset, test_ds: Dataset) -> tuple[Dataset, Dataset]:
    """Subset, then corrupt, then (for ZCA rules) whiten; test split is never subset."""
    if config.data_fraction < 1.0:
        train_ds = subset(train_ds, config.data_fraction, config.seed, config.stratified)
    train_ds, test_ds = noise_splits(train_ds, test_ds, config.noise)
    if config.rule.zca:
        t = zca_fit(train_ds.images.reshape(len(train_ds), -1), config.rule.zca_epsilon)
        train_ds = train_ds.with_images(zca_apply(t, train_ds.images))
        test_ds = test_ds.with_images(zca_apply(t, test_ds.images))
    return train_ds, test_ds


# --- tasks ---


class TrainTask:
    """Shared epoch loop: evaluation cadence, timing, sparsity and failure capture."""

    def __init__(self, net: Network, config: TrainingConfig, verbose: bool = False):
        self.net = net
        self.config = config
        self.verbose = verbose
        self.step = 0
        if config.sparsity:
            install_masks(net, make_mask(net, config.sparsity, config.seed))

    def train_epoch(self, epoch: int, train_ds: Dataset) -> None:
        raise NotImplementedError

    def score(self, train_ds: Dataset, test_ds: Dataset) -> float:
        return evaluate(self.net, test_ds)

    def run(self, train_ds: Dataset, test_ds: Dataset) -> RunRecord:
        config = self.config
        record = RunRecord(fingerprint=config.fingerprint(), config=config, seed=config.seed)
        elapsed = 0.0
        for epoch in range(config.epochs):
            started = time.perf_counter()
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    self.train_epoch(epoch, train_ds)
                    last = epoch + 1 == config.epochs
                    if (epoch + 1) % config.eval_every and not last:
                        elapsed += time.perf_counter() - started
                        continue
                    acc = self.score(train_ds, test_ds)
            except NumericError as exc:
                logger.warning("run %s seed %d diverged in epoch %d: %s",
                               record.fingerprint, config.seed, epoch + 1, exc)
                record.failed = True
                record.error = str(exc)
                return record
            elapsed += time.perf_counter() - started
            record.epochs.append(epoch + 1)
            record.accuracy.append(acc)
            record.wall_clock.append(elapsed)
            record.sparsity.append(measured_sparsity(self.net))
            elapsed = 0.0
            logger.info("%s seed %d epoch %d: test accuracy %.4f",
                        config.rule.kind, config.seed, epoch + 1, acc)
        return record


class GradientTrainTask(TrainTask):
    """Mini-batch training of every layer from a softmax cross-entropy error."""

    def __init__(
        self,
        net: Network,
        config: TrainingConfig,
        rule: CreditRule | None = None,
        verbose: bool = False,
    ):
        if config.rule.is_hebbian or net.head != "linear":
            raise ConfigurationError(f"{config.rule.kind!r} needs a linear head and a gradient rule")
        super().__init__(net, config, verbose)
        self.rule = rule or get_credit_rule(config.rule, net, config.seed)
        self.shuffle = make_rng(config.seed, "shuffle")

    def train_epoch(self, epoch: int, train_ds: Dataset) -> None:
        net, config = self.net, self.config
        lr = config.rule.schedule.lr_at(config.rule.lr, epoch)
        dtype = net.params[net.parametric[0]].weights.dtype
        for index in iterate_batches(len(train_ds), config.batch_size, self.shuffle):
            x = train_ds.images[index].astype(dtype, copy=False)
            scores, cache = forward(net, x)
            e_f = loss_grad_softmax_ce(scores, one_hot(train_ds.labels[index], train_ds.class_count, dtype))
            signal = self.rule.backward(net, cache, e_f / index.size)
            self.step += 1
            apply_updates(net, compute_updates(net, cache, signal, lr), step=self.step)


class HebbianTrainTask(TrainTask):
    """Greedy bottom-up unsupervised passes, then a ridge readout refit for scoring."""

    def __init__(self, net: Network, config: TrainingConfig, verbose: bool = False):
        if not config.rule.is_hebbian or net.head != "ridge":
            raise ConfigurationError(f"{config.rule.kind!r} needs a ridge head and a Hebbian rule")
        super().__init__(net, config, verbose)
        self.shuffle = make_rng(config.seed, "shuffle")
        self.layers = [i for i in net.parametric if net.specs[i].kind == "conv"]

    def _layer_inputs(self, index: int, train_ds: Dataset) -> Iterator[np.ndarray]:
        dtype = self.net.params[index].weights.dtype
        for batch in iterate_batches(len(train_ds), self.config.batch_size, self.shuffle):
            x = train_ds.images[batch].astype(dtype, copy=False)
            z, _ = forward(self.net, x, stop=index)
            yield z

    def train_epoch(self, epoch: int, train_ds: Dataset) -> None:
        rule = self.config.rule
        lr = rule.schedule.lr_at(rule.lr, epoch)
        for i in self.layers:
            self.step += hebbian_train_layer(
                self.net, i, self._layer_inputs(i, train_ds), rule, lr=lr, step_offset=self.step
            )
            if rule.decay_every == "epoch" and rule.weight_decay != 1.0:
                decay_layer(self.net, i, rule.weight_decay)
        if rule.prune > 0:
            magnitude_prune(self.net, rule.prune, self.layers)
        apply_masks(self.net)

    def score(self, train_ds: Dataset, test_ds: Dataset) -> float:
        fit_readout(self.net, train_ds, self.config.rule.ridge_lambda)
        return evaluate(self.net, test_ds)


def get_task(net: Network, config: TrainingConfig, verbose: bool = False) -> TrainTask:
    if config.rule.is_hebbian:
        return HebbianTrainTask(net, config, verbose)
    return GradientTrainTask(net, config, verbose=verbose)


def train(net: Network, config: TrainingConfig, train_ds: Dataset, test_ds: Dataset) -> RunRecord:
    """Train ``net`` in place on already-prepared splits."""
    return get_task(net, config).run(train_ds, test_ds)


def run_training(
    config: TrainingConfig, train_ds: Dataset, test_ds: Dataset
) -> tuple[RunRecord, Network]:
    """Prepare the data, build the network from ``config`` and train it."""
    train_ds, test_ds = prepare_data(config, train_ds, test_ds)
    net = get_network(config.rule, config.network, train_ds.image_shape, train_ds.class_count, config.seed)
    return train(net, config, train_ds, test_ds), net
