# baseline_processor.py: FedAvg, FedAvg-FT and first-order Per-FedAvg

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from autodiff import Tensor, gradients, sgd_step, softmax_cross_entropy
from errors import EmptyDataError
from federation_processor import accuracy, average_tensors
from metrics_log import MetricsLog
from network_manager import ArchConfig, BaseParams, base_forward
from partition_manager import ClientDataset, LabeledDataset
from run_counter import RunCounter
from seed_manager import BatchSampler, derive_seed


# ---------------------------
# Logging
# ---------------------------

logger = logging.getLogger(__name__)

GradFn = Callable[[List[Tensor]], List[np.ndarray]]


@dataclass(frozen=True)
class BaselineModel:
    """psi only; no modulator."""
    psi: BaseParams
    arch: ArchConfig

    def tensors(self) -> List[Tensor]:
        return self.psi.tensors()

    def with_tensors(self, tensors: Sequence[Tensor]) -> "BaselineModel":
        return BaselineModel(psi=self.psi.with_tensors(tensors), arch=self.arch)


# ---------------------------
# Building blocks
# ---------------------------

def plain_loss(psi: BaseParams, features: np.ndarray, labels: np.ndarray) -> Tuple[Tensor, Tensor]:
    logits = base_forward(features, psi)
    return softmax_cross_entropy(logits, labels), logits


def adapt(params: List[Tensor], grad_fn: GradFn, alpha: float, steps: int) -> List[Tensor]:
    """Inner loop: `steps` plain gradient steps p <- p - alpha * grad_fn(p)."""
    for _ in range(steps):
        params = sgd_step(params, grad_fn(params), alpha)
    return params


def outer_step(params: List[Tensor], grads: Sequence[np.ndarray], beta: float) -> List[Tensor]:
    """First-order outer update: gradients taken at the adapted point, applied to `params`."""
    return sgd_step(params, grads, beta)


def batch_grad_fn(psi: BaseParams, data: LabeledDataset, sampler: BatchSampler) -> GradFn:
    def grad_fn(params):
        batch = sampler.next_batch()
        loss, _ = plain_loss(psi.with_tensors(params), data.features[batch], data.labels[batch])
        return gradients(loss, params)

    return grad_fn


def local_sgd(psi: BaseParams, data: LabeledDataset, steps: int, lr: float,
              batch_size: int, seed: int) -> BaseParams:
    if len(data) == 0:
        raise EmptyDataError("BASELINE: local training needs a nonempty dataset")
    sampler = BatchSampler(len(data), batch_size, np.random.default_rng(seed))
    return psi.with_tensors(adapt(psi.tensors(), batch_grad_fn(psi, data, sampler), lr, steps))


def evaluate_plain(psi: BaseParams, data: LabeledDataset) -> Tuple[float, float]:
    loss, logits = plain_loss(psi, data.features, data.labels)
    return loss.item(), accuracy(logits, data.labels)


# ---------------------------
# Rounds
# ---------------------------

def fedavg_round(model: BaselineModel, clients_subset: Sequence[ClientDataset], local_steps: int,
                 lr: float, B: int, seed: int, log: Optional[MetricsLog] = None, round_idx: int = 0,
                 counter: Optional[RunCounter] = None) -> BaselineModel:
    """Every client trains from the same snapshot on all of its data; the server takes the uniform mean."""
    if not clients_subset:
        raise EmptyDataError("BASELINE: fedavg_round needs at least one client")
    trained = []
    for client in sorted(clients_subset, key=lambda c: c.client_id):
        psi_i = local_sgd(model.psi, client.data, local_steps, lr, B, derive_seed(seed, "client", client.client_id))
        trained.append(psi_i.tensors())
        if log is not None:
            log.add(round_idx, client.client_id, "train", *evaluate_plain(psi_i, client.data))
        if counter is not None:
            counter.add_optimizer_steps(local_steps)
            counter.add_examples_processed(local_steps * min(B, len(client.data)))
    return model.with_tensors(average_tensors(trained))


def fedavg_ft_evaluate(model: BaselineModel, new_client: ClientDataset, k_steps: int, lr: float,
                       seed: int, B: int = 30) -> Tuple[float, float]:
    """Fine-tune for k_steps on the pers split, score on the eval split."""
    held = new_client.eval_data
    psi = model.psi
    if k_steps > 0:
        psi = local_sgd(psi, new_client.pers_data, k_steps, lr, B, seed)
    return evaluate_plain(psi, held)


def perfedavg_round(model: BaselineModel, clients_subset: Sequence[ClientDataset], S: int, alpha: float,
                    beta: float, B: int, seed: int, log: Optional[MetricsLog] = None, round_idx: int = 0,
                    counter: Optional[RunCounter] = None) -> BaselineModel:
    """
    First-order Per-FedAvg.

    Inner: psi' = psi - alpha * grad L_D'(f_psi), S steps on pers batches.
    Outer: psi_i = psi - beta * grad L_D''(f_psi'), D'' an independent batch
    from the eval split. The server averages the psi_i.
    """
    if not clients_subset:
        raise EmptyDataError("BASELINE: perfedavg_round needs at least one client")
    updated = []
    for client in sorted(clients_subset, key=lambda c: c.client_id):
        pers, held = client.pers_data, client.eval_data
        rng = np.random.default_rng(derive_seed(seed, "client", client.client_id))
        inner = BatchSampler(len(pers), B, rng)
        outer = BatchSampler(len(held), B, rng)

        adapted = adapt(model.tensors(), batch_grad_fn(model.psi, pers, inner), alpha, S)
        batch = outer.next_batch()
        loss, logits = plain_loss(model.psi.with_tensors(adapted), held.features[batch], held.labels[batch])
        updated.append(outer_step(model.tensors(), gradients(loss, adapted), beta))

        if log is not None:
            log.add(round_idx, client.client_id, "train", loss.item(), accuracy(logits, held.labels[batch]))
        if counter is not None:
            counter.add_optimizer_steps(S + 1)
            counter.add_examples_processed(S * min(B, len(pers)) + batch.size)
    return model.with_tensors(average_tensors(updated))
