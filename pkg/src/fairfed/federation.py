"""Federated training loop with Lipschitz-scaled fair aggregation.

Every round each client evaluates its loss ``H`` at the current global
model, runs ``E`` epochs of local SGD, and reports

    dtheta = L * (theta - theta_local)
    delta  = |e| * w * H**(e-1) * dtheta
    g      = |e| * w * (L * H**(e-1) + |e-1| * H**(e-2) * ||dtheta||**2)

where ``L = 1/lr``, ``e`` is the client's loss exponent and ``w`` its
weight.  The server steps ``theta -= sum(delta) / sum(g)``.  ``g`` is an
upper bound on the local gradient-Lipschitz constant of ``w * H**e``, so
the server step is a safe gradient step on the fairness objective.  The
``fedavg`` preset instead averages local models weighted by train size.

Per-client randomness is keyed on ``(master_seed, client_id, purpose,
round)``, so results do not depend on the order (or thread) in which
clients are processed.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ClientData, Partition
from .errors import ConfigError, DomainError, NumericalError
from .nn import (DEFAULT_HIDDEN, Batch, ModelParams, accuracy, init_params, loss,
                 sgd_epochs)
from .objective import (LOSS_FLOOR, ClientCoefficients, FairnessPreset, PresetKind,
                        objective_value, resolve_preset)
from .uncertainty import aleatoric_score

log = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-8

_INIT, _SOLO_INIT, _SOLO_SGD, _LOCAL_SGD = 0, 1, 2, 3


@dataclass(frozen=True)
class FederationConfig:
    preset: FairnessPreset = field(default_factory=lambda: FairnessPreset(PresetKind.FEDAVG))
    rounds: int = 100
    local_epochs: int = 1
    learning_rate: float = 0.1
    batch_size: int = 32
    solo_epochs: int = 500
    solo_learning_rate: float = 0.001
    solo_batch_size: int = 128
    hidden_dim: int = DEFAULT_HIDDEN
    master_seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 0 or self.solo_epochs < 1:
            raise ConfigError("local_epochs must be >= 0 and solo_epochs >= 1")
        if not (self.learning_rate > 0 and self.solo_learning_rate > 0):
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1 or self.solo_batch_size < 1 or self.hidden_dim < 1:
            raise ConfigError("batch sizes and hidden_dim must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def lipschitz(self) -> float:
        return 1.0 / self.learning_rate


@dataclass(frozen=True, eq=False)
class ClientState:
    id: int
    train: Batch
    test: Batch
    master_seed: int = 0
    upsilon: float | None = None

    def rng_seed(self, purpose: int, round_index: int = 0) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.master_seed, self.id, purpose, round_index])


def make_clients(partition: Partition | list[ClientData], master_seed: int = 0) -> list[ClientState]:
    items = partition.clients if isinstance(partition, Partition) else partition
    return [ClientState(i, c.train, c.test, master_seed) for i, c in enumerate(items)]


@dataclass(frozen=True, eq=False)
class RoundUpdate:
    delta: np.ndarray
    g: float
    delta_norm: float = 0.0


@dataclass(eq=False)
class RoundRecord:
    round: int
    losses: np.ndarray
    weights: np.ndarray
    exponents: np.ndarray
    delta_norms: np.ndarray
    g: np.ndarray | None
    objective: float
    sum_g: float | None
    global_acc: float | None = None
    guarded: bool = False


@dataclass(eq=False)
class TrainingHistory:
    preset: str
    upsilons: np.ndarray
    records: list[RoundRecord] = field(default_factory=list)
    final: ModelParams | None = None

    def __len__(self):
        return len(self.records)


def solo_pretrain(client: ClientState, solo_epochs: int, config: FederationConfig,
                  num_classes: int) -> ClientState:
    """Train a private model on the client's data and record its mean entropy."""
    dims = (client.train.features.shape[1], config.hidden_dim, num_classes)
    model = init_params(client.rng_seed(_SOLO_INIT), dims)
    model = sgd_epochs(model, client.train, solo_epochs, config.solo_learning_rate,
                       config.solo_batch_size, client.rng_seed(_SOLO_SGD))
    return replace(client, upsilon=aleatoric_score(model, client.train))


def local_update(client: ClientState, global_model: ModelParams, epochs: int, lr: float,
                 batch_size: int, seed) -> ModelParams:
    return sgd_epochs(global_model, client.train, epochs, lr, batch_size, seed)


def lipschitz_bound(loss_value: float, grad_sq: float, weight: float, exponent: float,
                    lipschitz: float) -> float:
    """Upper bound on the gradient-Lipschitz constant of ``w * H**e`` at one point.

    ``lipschitz`` bounds that of ``H`` itself and ``grad_sq`` is the squared
    gradient norm of ``H`` there.  Exact for quadratic ``H`` and ``e >= 1``.
    """
    H = max(float(loss_value), LOSS_FLOOR)
    e = float(exponent)
    return abs(e) * weight * (lipschitz * H ** (e - 1.0) + abs(e - 1.0) * H ** (e - 2.0) * grad_sq)


def client_deltas(global_model: ModelParams, local_model: ModelParams, loss_at_global: float,
                  weight: float, exponent: float, lipschitz: float) -> RoundUpdate:
    """Scaled model delta and step-size denominator for one client.

    Absolute values of ``e`` and ``e - 1`` keep ``g`` a valid Lipschitz
    bound for exponents below one; for ``e >= 1`` they change nothing.
    A negative exponent (desert) therefore descends on ``H`` rather than
    ascending on it.
    """
    if not lipschitz > 0:
        raise ConfigError("Lipschitz constant must be positive")
    H = max(float(loss_at_global), LOSS_FLOOR)
    e = float(exponent)
    with np.errstate(over="ignore", invalid="ignore"):
        dtheta = lipschitz * (global_model.values - local_model.values)
        sq = float(dtheta @ dtheta)
        try:
            delta = (abs(e) * weight * H ** (e - 1.0)) * dtheta
            g = lipschitz_bound(H, sq, weight, e, lipschitz)
        except OverflowError:
            delta, g = dtheta, math.inf
    if not (math.isfinite(g) and np.all(np.isfinite(delta))):
        raise NumericalError(
            f"non-finite client update (loss={H:.3g}, w={weight:.3g}, e={e:.3g}, "
            f"|dtheta|^2={sq:.3g})")
    return RoundUpdate(delta, g, math.sqrt(sq))


def _aggregate(global_model: ModelParams, updates: list[RoundUpdate]):
    if not updates:
        raise ConfigError("server_aggregate needs at least one update")
    total = np.zeros_like(global_model.values)
    denom = 0.0
    for u in updates:
        total += u.delta
        denom += u.g
    guarded = False
    if denom <= DENOMINATOR_FLOOR:
        guarded = True
        fallback = sum(abs(u.g) for u in updates)
        log.warning("sum of g = %.3g below %.0e; using sum |g| = %.3g",
                    denom, DENOMINATOR_FLOOR, fallback)
        denom = fallback
        if denom <= DENOMINATOR_FLOOR:
            raise NumericalError(f"aggregation denominator {denom:.3g} is not positive")
    values = global_model.values - total / denom
    if not np.all(np.isfinite(values)):
        raise NumericalError("aggregated model is not finite")
    return global_model.with_values(values), guarded


def server_aggregate(global_model: ModelParams, updates: list[RoundUpdate]) -> ModelParams:
    """``theta - sum(delta) / sum(g)``, summed in list order."""
    return _aggregate(global_model, updates)[0]


def fedavg_round(client_models: list[ModelParams], sizes) -> ModelParams:
    """Train-size weighted average of client models."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if len(client_models) != len(sizes) or len(sizes) == 0:
        raise ConfigError("need one size per client model")
    if np.any(sizes <= 0):
        raise ConfigError("client sizes must be positive")
    frac = sizes / sizes.sum()
    out = np.zeros_like(client_models[0].values)
    for f, m in zip(frac, client_models):
        out += f * m.values
    return client_models[0].with_values(out)


def ensure_upsilons(clients: list[ClientState], config: FederationConfig,
                    num_classes: int) -> list[ClientState]:
    """Solo-pretrain every client that has no uncertainty score yet."""
    return [c if c.upsilon is not None else
            solo_pretrain(c, config.solo_epochs, config, num_classes) for c in clients]


def _client_step(client, theta, config, round_index, weight, exponent, fedavg):
    H = loss(theta, client.train)
    local = local_update(client, theta, config.local_epochs, config.learning_rate,
                         config.batch_size, client.rng_seed(_LOCAL_SGD, round_index))
    if fedavg:
        diff = theta.values - local.values
        return H, local, RoundUpdate(np.empty(0), float("nan"),
                                     config.lipschitz * math.sqrt(float(diff @ diff)))
    return H, local, client_deltas(theta, local, H, weight, exponent, config.lipschitz)


def run_federation(config: FederationConfig, clients: list[ClientState], num_classes: int,
                   *, global_test: Batch | None = None, init: ModelParams | None = None,
                   round_callback=None) -> tuple[ModelParams, TrainingHistory]:
    """Full-participation federated training for ``config.rounds`` rounds.

    Clients lacking an uncertainty score are solo-pretrained first when
    the preset needs one.  ``global_test`` (optional) is scored after every
    round.  Raises :class:`NumericalError` carrying the failing round.
    """
    if not clients:
        raise ConfigError("need at least one client")
    preset = config.preset
    fedavg = preset.kind is PresetKind.FEDAVG
    if preset.needs_uncertainty:
        clients = ensure_upsilons(clients, config, num_classes)
    upsilons = np.array([np.nan if c.upsilon is None else c.upsilon for c in clients])
    sizes = np.array([len(c.train) for c in clients], dtype=np.float64)
    if fedavg:
        coeffs = ClientCoefficients(sizes / sizes.sum(), np.ones(len(clients)))
    else:
        coeffs = resolve_preset(preset, upsilons if preset.needs_uncertainty
                                else np.ones(len(clients)))

    theta = init if init is not None else init_params(
        np.random.SeedSequence([config.master_seed, _INIT]),
        (clients[0].train.features.shape[1], config.hidden_dim, num_classes))
    history = TrainingHistory(preset.label, upsilons)

    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for t in range(config.rounds):
            args = [(c, theta, config, t, coeffs.weights[i], coeffs.exponents[i], fedavg)
                    for i, c in enumerate(clients)]
            try:
                if pool is not None:
                    results = list(pool.map(lambda a: _client_step(*a), args))
                else:
                    results = [_client_step(*a) for a in args]
                losses = np.array([r[0] for r in results])
                updates = [r[2] for r in results]
                if fedavg:
                    theta = fedavg_round([r[1] for r in results], sizes)
                    guarded, g, sum_g = False, None, None
                    objective = float(coeffs.weights @ losses)
                else:
                    theta, guarded = _aggregate(theta, updates)
                    g = np.array([u.g for u in updates])
                    sum_g = float(sum(u.g for u in updates))
                    try:
                        objective = objective_value(losses, coeffs)
                    except DomainError as exc:
                        raise NumericalError(str(exc)) from exc
            except NumericalError as exc:
                raise NumericalError(f"round {t}: {exc}", round_index=t) from exc
            record = RoundRecord(
                round=t, losses=losses, weights=coeffs.weights, exponents=coeffs.exponents,
                delta_norms=np.array([u.delta_norm for u in updates]), g=g,
                objective=objective, sum_g=sum_g, guarded=guarded,
                global_acc=accuracy(theta, global_test) if global_test is not None else None)
            history.records.append(record)
            if round_callback is not None:
                round_callback(record)
    finally:
        if pool is not None:
            pool.shutdown()
    history.final = theta
    return theta, history
