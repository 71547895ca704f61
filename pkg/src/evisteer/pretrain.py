"""Contrastive warm-up that stands in for a pretrained backbone."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import DomainShift, SyntheticTaskSpec, class_prompts, generate_arrays
from .encoder import ModelParams, classify, encode
from .steering import SteeringConfig
from .tensor import GradTape, Tensor, backward
from .train import AdamState, TrainConfig, adam_step, cross_entropy


@dataclass(frozen=True)
class PretextConfig:
    steps: int = 300
    classes: int = 8
    per_class: int = 4
    learning_rate: float = 2e-3
    nuisance_dims: int = 0
    prompt_noise: float = 0.0
    seed_offset: int = 1_000_000  # keeps pretext prototypes disjoint from task seeds


def pretext_spec(task: SyntheticTaskSpec, pcfg: PretextConfig, step: int) -> SyntheticTaskSpec:
    return replace(
        task,
        C=pcfg.classes,
        prototype_seed=pcfg.seed_offset + step,
        nuisance_dims=pcfg.nuisance_dims,
        prompt_noise=pcfg.prompt_noise,
        shift=DomainShift(),
        class_subset=None,
    )


def pretrain_backbone(model: ModelParams, task: SyntheticTaskSpec, pcfg: PretextConfig, seed: int) -> list[float]:
    """Train every backbone weight image-to-prompt on fresh pretext classes each step."""
    frozen = sorted(model.frozen.items())
    for _, t in frozen:
        t.requires_grad = True
    opt = TrainConfig(learning_rate=pcfg.learning_rate)
    state = AdamState()
    no_adapt = SteeringConfig(d=0)
    losses = []
    try:
        for step in range(pcfg.steps):
            spec = pretext_spec(task, pcfg, step)
            tokens, labels = generate_arrays(spec, {c: pcfg.per_class for c in range(spec.C)}, seed + step)
            for _, t in frozen:
                t.grad = None
            with GradTape() as tape:
                img, txt, _ = encode(Tensor(tokens), Tensor(class_prompts(spec)), model, no_adapt)
                loss = cross_entropy(classify(img, txt, model.log_temperature), labels)
            backward(loss, tape)
            for _, t in frozen:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
            adam_step(frozen, state, opt)
            losses.append(loss.item())
    finally:
        for _, t in frozen:
            t.requires_grad = False
            t.grad = None
    return losses
