# federation_processor.py: personalization, client rounds, aggregation and the round loop

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from autodiff import Tensor, gradients, sgd_step, softmax_cross_entropy
from errors import ConfigError, EmptyDataError, ShapeError
from metrics_log import MetricsLog
from network_manager import (
    ArchConfig, BaseParams, GlobalModel, ModulationParams, ModulatorParams,
    base_forward, init_global, modulator_forward,
)
from partition_manager import ClientDataset, LabeledDataset
from run_counter import RunCounter
from seed_manager import BatchSampler, derive_seed, make_rng


# ---------------------------
# Logging
# ---------------------------

logger = logging.getLogger(__name__)

METHODS = ("cafeme", "fedavg", "fedavg_ft", "perfedavg")


# ---------------------------
# Configuration and results
# ---------------------------

@dataclass(frozen=True)
class RoundConfig:
    """
    rounds T, clients_per_round M, pers_steps S, inner step alpha, outer step
    beta, batch_size B. local_steps is the FedAvg local step count; eval_every
    > 0 adds a held-out evaluation every that many rounds.
    """
    rounds: int = 200
    clients_per_round: int = 5
    pers_steps: int = 5
    alpha: float = 0.05
    beta: float = 0.05
    batch_size: int = 30
    seed: int = 0
    local_steps: int = 5
    eval_every: int = 0

    def validate(self) -> "RoundConfig":
        checks = (
            ("rounds", self.rounds >= 0),
            ("clients_per_round", self.clients_per_round >= 1),
            ("pers_steps", self.pers_steps >= 0),
            ("alpha", self.alpha >= 0),
            ("beta", self.beta >= 0),
            ("batch_size", self.batch_size >= 1),
            ("local_steps", self.local_steps >= 0),
            ("eval_every", self.eval_every >= 0),
        )
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"ROUND CONFIG: invalid value for '{key}': {getattr(self, key)}")
        return self


@dataclass(frozen=True)
class PersonalizationResult:
    psi: BaseParams
    zeta: ModulationParams
    mu: ModulatorParams
    context: Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    omega_prime: GlobalModel
    eval_loss: float
    eval_accuracy: float
    grads: Tuple[np.ndarray, ...] = field(default=(), repr=False)
    personalized: Optional[GlobalModel] = field(default=None, repr=False)


@dataclass
class FederationResult:
    model: object
    log: MetricsLog
    counter: RunCounter


# ---------------------------
# Losses
# ---------------------------

def accuracy(logits: Tensor, labels: Sequence[int]) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.mean(np.argmax(logits.data, axis=1) == labels))


def modulated_loss(model: GlobalModel, features: np.ndarray, labels: np.ndarray,
                   context: Tuple[np.ndarray, np.ndarray]) -> Tuple[Tensor, Tensor]:
    """L_D(f_psi | zeta) with zeta = g_mu(context); returns (loss, logits)."""
    zeta = modulator_forward(context, model.mu, model.arch)
    logits = base_forward(features, model.psi, zeta)
    return softmax_cross_entropy(logits, labels), logits


# ---------------------------
# Personalization and client round
# ---------------------------

def personalization(S: int, alpha: float, pers_data: LabeledDataset, omega: GlobalModel,
                    seed: int, batch_size: int = 30) -> PersonalizationResult:
    """
    S simultaneous SGD steps on (mu', psi') starting from omega, each on a fresh
    batch of the pers split; zeta is then predicted from the last batch.

    With S = 0 one batch is still drawn so that zeta can be computed.
    """
    if pers_data is None or len(pers_data) == 0:
        raise EmptyDataError("FEDERATION: personalization needs a nonempty pers split")
    sampler = BatchSampler(len(pers_data), batch_size, np.random.default_rng(seed))
    model = omega

    batch = None
    for _ in range(S):
        batch = sampler.next_batch()
        x, y = pers_data.features[batch], pers_data.labels[batch]
        loss, _ = modulated_loss(model, x, y, (x, y))
        params = model.tensors()
        model = model.with_tensors(sgd_step(params, gradients(loss, params), alpha))

    if batch is None:
        batch = sampler.next_batch()
    context = (pers_data.features[batch], pers_data.labels[batch])
    zeta = modulator_forward(context, model.mu, model.arch)
    return PersonalizationResult(psi=model.psi, zeta=zeta, mu=model.mu, context=context)


def client_round(omega: GlobalModel, client: ClientDataset, cfg: RoundConfig, round_seed: int) -> ClientUpdate:
    """
    Personalize on the pers split, then take one first-order outer step:
    omega' = omega - beta * g, g = grad of the eval-split loss at (mu', psi').
    """
    pers, held = client.pers_data, client.eval_data
    result = personalization(
        cfg.pers_steps, cfg.alpha, pers, omega,
        derive_seed(round_seed, "client", client.client_id), cfg.batch_size,
    )
    personalized = GlobalModel(mu=result.mu, psi=result.psi, arch=omega.arch)
    loss, logits = modulated_loss(personalized, held.features, held.labels, result.context)
    grads = gradients(loss, personalized.tensors())
    omega_prime = omega.with_tensors(sgd_step(omega.tensors(), grads, cfg.beta))
    return ClientUpdate(
        client_id=client.client_id,
        omega_prime=omega_prime,
        eval_loss=loss.item(),
        eval_accuracy=accuracy(logits, held.labels),
        grads=tuple(grads),
        personalized=personalized,
    )


# ---------------------------
# Aggregation
# ---------------------------

def average_tensors(parameter_sets: Sequence[Sequence[Tensor]]) -> List[Tensor]:
    """
    Uniform componentwise mean of equally shaped parameter lists.

    Summation runs in the given order and the result is clipped to the
    componentwise [min, max] of the inputs.
    """
    if not parameter_sets:
        raise EmptyDataError("FEDERATION: cannot aggregate an empty list of updates")
    reference = [t.shape for t in parameter_sets[0]]
    for params in parameter_sets[1:]:
        shapes = [t.shape for t in params]
        if shapes != reference:
            raise ShapeError(f"FEDERATION: update shapes {shapes} do not match {reference}")

    averaged = []
    count = len(parameter_sets)
    for position, first in enumerate(parameter_sets[0]):
        total = np.array(first.data, dtype=np.float64)
        low, high = total.copy(), total.copy()
        for params in parameter_sets[1:]:
            value = params[position].data
            total = total + value
            low, high = np.minimum(low, value), np.maximum(high, value)
        averaged.append(Tensor(np.clip(total / count, low, high), requires_grad=first.requires_grad))
    return averaged


def server_aggregate(updates: Sequence[ClientUpdate]) -> GlobalModel:
    if not updates:
        raise EmptyDataError("FEDERATION: cannot aggregate an empty list of updates")
    ordered = sorted(updates, key=lambda u: u.client_id)
    template = ordered[0].omega_prime
    return template.with_tensors(average_tensors([u.omega_prime.tensors() for u in ordered]))


# ---------------------------
# Evaluation
# ---------------------------

def evaluate_personalized(omega: GlobalModel, new_client: ClientDataset, k_steps: int,
                          alpha: float, seed: int, batch_size: int = 30) -> Tuple[float, float]:
    result = personalization(k_steps, alpha, new_client.pers_data, omega, seed, batch_size)
    held = new_client.eval_data
    logits = base_forward(held.features, result.psi, result.zeta)
    return softmax_cross_entropy(logits, held.labels).item(), accuracy(logits, held.labels)


def evaluate_method(model, client: ClientDataset, method: str, k_steps: int,
                    cfg: RoundConfig, seed: int) -> Tuple[float, float]:
    """Test-time protocol per method: CAFeMe personalizes, FedAvg does not, the rest fine-tune."""
    from baseline_processor import fedavg_ft_evaluate

    if method == "cafeme":
        return evaluate_personalized(model, client, k_steps, cfg.alpha, seed, cfg.batch_size)
    if method == "fedavg":
        return fedavg_ft_evaluate(model, client, 0, cfg.alpha, seed, cfg.batch_size)
    if method in ("fedavg_ft", "perfedavg"):
        return fedavg_ft_evaluate(model, client, k_steps, cfg.alpha, seed, cfg.batch_size)
    raise ConfigError(f"FEDERATION: unknown method '{method}', expected one of {METHODS}")


# ---------------------------
# Round loop
# ---------------------------

def sample_clients(n_clients: int, m: int, master_seed: int, round_idx: int) -> List[int]:
    rng = make_rng(master_seed, "sample", round_idx)
    return sorted(int(i) for i in rng.choice(n_clients, size=m, replace=False))


class FederationProcessor:
    """
    Drives the federated round loop for one method.

    `managers` may carry a "counter" (RunCounter) to accumulate into; a fresh
    one is made otherwise.
    """

    def __init__(self, managers: Optional[dict] = None):
        managers = managers or {}

        self.managers = managers
        self.counter  = managers.get("counter")
        if self.counter is None:
            self.counter = RunCounter()

    def run(self, clients: Sequence[ClientDataset], cfg: RoundConfig, arch: ArchConfig,
            method: str = "cafeme", held_out: Sequence[ClientDataset] = (),
            progress: bool = False) -> FederationResult:
        """
        Train for cfg.rounds rounds with the named method.

        Every round samples M distinct clients with a round-seeded generator,
        runs each against the same snapshot and aggregates in client-id order.
        Train records go to the log under phase "train"; for CAFeMe these are
        each selected client's outer-loss metrics, i.e. its personalized model
        on its own eval split. With eval_every > 0 the held-out clients are
        evaluated every eval_every rounds under phase "eval".
        """
        from baseline_processor import BaselineModel, fedavg_round, perfedavg_round

        cfg.validate()
        arch.validate()
        if method not in METHODS:
            raise ConfigError(f"FEDERATION: unknown method '{method}', expected one of {METHODS}")
        if cfg.clients_per_round > len(clients):
            raise ConfigError(
                f"FEDERATION: clients_per_round={cfg.clients_per_round} exceeds the {len(clients)} available clients"
            )

        log = MetricsLog()
        omega = init_global(arch, derive_seed(cfg.seed, "init"))
        model = omega if method == "cafeme" else BaselineModel(psi=omega.psi, arch=arch)
        logger.info(f"FEDERATION: {method} over {len(clients)} clients, T={cfg.rounds} M={cfg.clients_per_round}")

        for t in tqdm(range(cfg.rounds), desc=f"{method} rounds", disable=not progress):
            subset = [clients[i] for i in sample_clients(len(clients), cfg.clients_per_round, cfg.seed, t)]
            round_seed = derive_seed(cfg.seed, "round", t)

            if method == "cafeme":
                model = self.cafeme_round(model, subset, cfg, round_seed, log, t)
            elif method == "perfedavg":
                model = perfedavg_round(model, subset, cfg.pers_steps, cfg.alpha, cfg.beta, cfg.batch_size,
                                        round_seed, log=log, round_idx=t, counter=self.counter)
            else:
                model = fedavg_round(model, subset, cfg.local_steps, cfg.alpha, cfg.batch_size,
                                     round_seed, log=log, round_idx=t, counter=self.counter)

            self.counter.add_client_updates(len(subset))
            self.counter.add_rounds_completed()
            if held_out and cfg.eval_every and (t + 1) % cfg.eval_every == 0:
                self.log_held_out(model, held_out, method, cfg, log, t)

            if log.for_phase("train", t):
                logger.debug(f"FEDERATION: round {t} mean train accuracy {log.mean('train', round_idx=t):.4f}")

        return FederationResult(model=model, log=log, counter=self.counter)

    def cafeme_round(self, omega: GlobalModel, subset: Sequence[ClientDataset], cfg: RoundConfig,
                     round_seed: int, log: MetricsLog, round_idx: int) -> GlobalModel:
        updates = [client_round(omega, client, cfg, round_seed) for client in subset]
        for update in updates:
            log.add(round_idx, update.client_id, "train", update.eval_loss, update.eval_accuracy)
        for client in subset:
            self.counter.add_optimizer_steps(cfg.pers_steps + 1)
            self.counter.add_examples_processed(
                cfg.pers_steps * min(cfg.batch_size, len(client.pers_idx)) + len(client.eval_idx)
            )
        return server_aggregate(updates)

    def log_held_out(self, model, held_out: Sequence[ClientDataset], method: str, cfg: RoundConfig,
                     log: MetricsLog, round_idx: int) -> None:
        for client in held_out:
            loss, acc = evaluate_method(
                model, client, method, cfg.pers_steps, cfg,
                derive_seed(cfg.seed, "eval", round_idx, client.client_id),
            )
            log.add(round_idx, client.client_id, "eval", loss, acc)


def run_federation(clients: Sequence[ClientDataset], cfg: RoundConfig, arch: ArchConfig,
                   method: str = "cafeme", held_out: Sequence[ClientDataset] = (),
                   progress: bool = False, counter: Optional[RunCounter] = None) -> FederationResult:
    return FederationProcessor({"counter": counter}).run(clients, cfg, arch, method, held_out, progress)
