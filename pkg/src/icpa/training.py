"""Two-phase incentive-compatible training.

Phase 1 optimizes the alignment model: per step, a same-category minibatch,
per-source edge losses combined with a freshly sampled simplex mixture, plus
beta times the gated alignment objective; model and gate parameters update
jointly. The result is frozen. Phase 2 optimizes for a target source:
preference-constrained descent weights over the per-source gradients, plus
beta times the alignment term with the match and gates recomputed from the
frozen model and held constant.

Also here: the single-source baseline runner (supplies the per-source optima
nu0 that negative transfer is measured against), the ablation variants, and
run-report assembly.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import pareto
from .alignment import (
    AlignmentResult,
    GateParams,
    ProjectionSet,
    alignment_objective,
    frozen_alignment_loss,
    gate_forward,
    init_gate_params,
)
from .graphs import MultiSourceGraph, category_partition
from .metrics import triples_to_plans
from .model import (
    EmbedPlan,
    ModelConfig,
    ModelParams,
    TriplePlans,
    check_finite,
    clone_params,
    edge_loss,
    embed_forward,
    make_plan,
    params_hash,
    zero_grads_like,
)
from .pareto import BaselineOptima, PreferenceVector, pmtl_weights, sample_lambda, tnt
from .sampling import CategoryBatch, make_eval_triples, next_batch

ADAGRAD_EPS = 1e-8

_STREAM_MODEL_INIT = 0
_STREAM_SOO = 1
_STREAM_PHASE1 = 2
_STREAM_PHASE2 = 3
_STREAM_PROJECTIONS = 4
_STREAM_EVAL = 5
_STREAM_GATE_INIT = 6


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    learning_rate: float = 0.02
    batch_size: int = 128
    phase1_steps: int = 300
    phase2_steps: int = 200
    soo_steps: int = 200
    epsilon_pref: float = 0.05
    seed: int = 0
    targets: tuple[int, ...] = (0,)
    num_negatives: int = 6
    walk_length: int = 1
    n_projections: int = 128
    align_cap: int = 1024
    projection_refresh: int = 50
    eval_triples: int = 200
    eval_seed: int = 10_000
    checkpoint_every: int = 25
    early_stop_patience: int | None = None
    warm_start_phase2: bool = True
    ablation: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig.desk)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.ablation not in (None, "align", "pareto", "front"):
            raise ValueError("ablation must be one of align|pareto|front")
        for s in (self.phase1_steps, self.phase2_steps, self.soo_steps):
            if s < 0:
                raise ValueError("step budgets must be >= 0")
        if not (0.0 <= self.epsilon_pref):
            raise ValueError("epsilon_pref must be >= 0")


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["targets"] = list(config.targets)
    d["model"]["hidden_dims"] = list(config.model.hidden_dims)
    return d


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _rng(config: TrainConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, *key]))


# ---------------------------------------------------------------------------
# Optimizer: per-parameter accumulated-squared-gradient adaptive step
# ---------------------------------------------------------------------------


class Adagrad:
    def __init__(self, params: ModelParams, learning_rate: float):
        self.learning_rate = learning_rate
        self.state = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        for k, g in grads.items():
            acc = self.state[k]
            acc += g * g
            params[k] -= self.learning_rate * g / (np.sqrt(acc) + ADAGRAD_EPS)
        check_finite(params)


# ---------------------------------------------------------------------------
# Per-run evaluation harness (fixed triples, inference-mode plans)
# ---------------------------------------------------------------------------


class EvalHarness:
    """Fixed per-source evaluation triples; the same harness scores the
    single-source baselines and every multi-source model, so negative-transfer
    differences are like for like."""

    def __init__(self, graph: MultiSourceGraph, config: TrainConfig):
        self.graph = graph
        self.config = config
        self.plan_sets: dict[int, list[TriplePlans]] = {}
        for j in range(graph.num_sources):
            rng = np.random.default_rng(
                np.random.SeedSequence([config.eval_seed, _STREAM_EVAL, j])
            )
            triples = make_eval_triples(
                graph.sources[j], rng, config.eval_triples, config.num_negatives, config.walk_length
            )
            self.plan_sets[j] = triples_to_plans(
                graph, j, triples, config.model, seed=config.eval_seed
            )

    def source_loss(self, params: ModelParams, j: int) -> float:
        plans = self.plan_sets[j]
        if not plans:
            return float("nan")
        return edge_loss(params, plans, self.config.model, len(self.graph.type_order))

    def loss_vector(self, params: ModelParams) -> list[float]:
        return [self.source_loss(params, j) for j in range(self.graph.num_sources)]


# ---------------------------------------------------------------------------
# Step plumbing shared by all phases
# ---------------------------------------------------------------------------


def _batch_plans(
    graph: MultiSourceGraph,
    batch: CategoryBatch,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[dict[int, list[TriplePlans]], dict[int, list[EmbedPlan]]]:
    """One neighbor-sample plan per (source, node) per step, shared across the
    node's roles in the step."""
    cache: dict[tuple[int, int], EmbedPlan] = {}

    def plan(j: int, nid: int) -> EmbedPlan:
        key = (j, nid)
        if key not in cache:
            cache[key] = make_plan(graph, j, nid, config.model, rng)
        return cache[key]

    triple_plans: dict[int, list[TriplePlans]] = {}
    for j in sorted(batch.triples):
        rows = []
        for t in batch.triples[j]:
            rows.append(
                TriplePlans(
                    anchor=plan(j, t.anchor),
                    positive=plan(j, t.positive),
                    negatives=[plan(j, n) for n in t.negatives],
                )
            )
        triple_plans[j] = rows
    align_plans = {
        j: [plan(j, nid) for nid in ids] for j, ids in sorted(batch.align_nodes.items()) if ids
    }
    return triple_plans, align_plans


def _per_source_losses_and_grads(
    params: ModelParams,
    triple_plans: dict[int, list[TriplePlans]],
    config: TrainConfig,
    num_types: int,
    with_grads: bool = True,
) -> tuple[dict[int, float], dict[int, ModelParams]]:
    losses: dict[int, float] = {}
    grads: dict[int, ModelParams] = {}
    for j, plans in triple_plans.items():
        if not plans:
            continue
        g = zero_grads_like(params) if with_grads else None
        losses[j] = edge_loss(params, plans, config.model, num_types, grads=g)
        if with_grads:
            grads[j] = g
    return losses, grads


def _flatten(grads: ModelParams) -> np.ndarray:
    return np.concatenate([grads[k].ravel() for k in sorted(grads)])


def _add_scaled(total: ModelParams, grads: ModelParams, scale: float) -> None:
    for k, g in grads.items():
        total[k] += scale * g


@dataclass
class Phase1StepResult:
    total: float
    losses: dict[int, float]
    align: AlignmentResult | None


def phase1_objective(
    params: ModelParams,
    gate_params: GateParams | None,
    triple_plans: dict[int, list[TriplePlans]],
    align_plans: dict[int, list[EmbedPlan]],
    lam: dict[int, float],
    projections: ProjectionSet | None,
    beta: float,
    config: TrainConfig,
    num_types: int,
    num_sources: int,
    grads_model: ModelParams | None = None,
    grads_gate: GateParams | None = None,
) -> Phase1StepResult:
    """Mixture-weighted edge losses plus beta times the alignment objective.

    Pure in (params, gate_params) given fixed plans, mixture and projections —
    the gradient-audit tests difference exactly this function.
    """
    with_grads = grads_model is not None
    losses, per_grads = _per_source_losses_and_grads(
        params, triple_plans, config, num_types, with_grads=with_grads
    )
    total = sum(lam[j] * losses[j] for j in losses)
    if with_grads:
        for j, g in per_grads.items():
            _add_scaled(grads_model, g, lam[j])

    align = None
    if beta > 0 and gate_params is not None and projections is not None and align_plans:
        scaled_model = zero_grads_like(params) if with_grads else None
        scaled_gate = zero_grads_like(gate_params) if with_grads else None
        align = alignment_objective(
            params,
            gate_params,
            align_plans,
            projections,
            config.model,
            num_types,
            num_sources,
            grads_model=scaled_model,
            grads_gate=scaled_gate,
            cap=config.align_cap,
        )
        total += beta * align.value
        if with_grads:
            _add_scaled(grads_model, scaled_model, beta)
            _add_scaled(grads_gate, scaled_gate, beta)
    return Phase1StepResult(total=total, losses=losses, align=align)


class _ProjectionStream:
    """Seeded stream of projection sets, refreshed every few steps."""

    def __init__(self, dim: int, config: TrainConfig):
        self.dim = dim
        self.n_proj = config.n_projections
        self.refresh = max(1, config.projection_refresh)
        self.rng = _rng(config, _STREAM_PROJECTIONS)
        self.current: ProjectionSet | None = None

    def at_step(self, step: int) -> ProjectionSet:
        if step % self.refresh == 0 or self.current is None:
            self.current = ProjectionSet.draw(self.dim, self.n_proj, rng=self.rng)
        return self.current


# ---------------------------------------------------------------------------
# Phase runners
# ---------------------------------------------------------------------------


@dataclass
class PhaseHistory:
    steps: list[int] = field(default_factory=list)
    losses: list[list[float | None]] = field(default_factory=list)
    align_costs: list[float | None] = field(default_factory=list)
    gate_losses: list[float | None] = field(default_factory=list)
    checkpoint_steps: list[int] = field(default_factory=list)
    checkpoint_losses: list[list[float]] = field(default_factory=list)
    pair_costs: list[dict[str, float]] = field(default_factory=list)

    def record_step(self, step, m, losses, align):
        self.steps.append(step)
        self.losses.append([losses.get(j) for j in range(m)])
        self.align_costs.append(None if align is None else align.match_value)
        self.gate_losses.append(None if align is None else align.gate_value)
        self.pair_costs.append(
            {}
            if align is None
            else {f"{a}->{b}": c for (a, b), c in sorted(align.pair_costs.items())}
        )


@dataclass
class SooResult:
    params: ModelParams
    final_loss: float
    history: PhaseHistory


@dataclass
class Phase1Result:
    params: ModelParams
    gate_params: GateParams | None
    history: PhaseHistory
    frozen_hash: str | None


@dataclass
class Phase2Result:
    params: ModelParams
    history: PhaseHistory
    tnt: pareto.TntReport
    restricted_steps: int
    min_target_alignment: float
    weights_history: list[list[float]]


def _early_stop(losses: list[float], patience: int | None) -> bool:
    if patience is None or len(losses) <= patience:
        return False
    best_old = min(losses[:-patience])
    best_new = min(losses[-patience:])
    return best_new > best_old - 1e-4


def run_soo(graph: MultiSourceGraph, source: int, config: TrainConfig, harness: EvalHarness):
    """Single-source baseline: the phase-1 loop restricted to one source, no
    alignment. Returns the trained parameters and the fixed-harness loss."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_SOO, source]))
    init_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, _STREAM_MODEL_INIT, source + 1])
    )
    params = init_model_params_for(graph, config, init_rng)
    result = _phase1_like_loop(
        graph,
        config,
        params=params,
        gate_params=None,
        beta=0.0,
        steps=config.soo_steps,
        rng=rng,
        harness=harness,
        only_source=source,
        pmtl_target=None,
    )
    return SooResult(
        params=result[0], final_loss=harness.source_loss(result[0], source), history=result[2]
    )


def init_model_params_for(
    graph: MultiSourceGraph, config: TrainConfig, rng: np.random.Generator
) -> ModelParams:
    from .model import init_model_params

    return init_model_params(graph.num_features, len(graph.type_order), config.model, rng)


def _phase1_like_loop(
    graph: MultiSourceGraph,
    config: TrainConfig,
    *,
    params: ModelParams,
    gate_params: GateParams | None,
    beta: float,
    steps: int,
    rng: np.random.Generator,
    harness: EvalHarness,
    only_source: int | None = None,
    pmtl_target: int | None = None,
) -> tuple[ModelParams, GateParams | None, PhaseHistory]:
    """Shared optimization loop.

    With ``pmtl_target`` unset the per-source losses are combined with a
    sampled mixture (phase 1 / baseline); set, with preference-constrained
    weights and live alignment (the single-phase "front" ablation).
    """
    m = graph.num_sources
    num_types = len(graph.type_order)
    opt = Adagrad(params, config.learning_rate)
    gate_opt = Adagrad(gate_params, config.learning_rate) if gate_params is not None else None
    projections = _ProjectionStream(config.model.rep_dim, config) if beta > 0 else None
    history = PhaseHistory()
    checkpoint_loss_track: list[float] = []

    for step in range(steps):
        batch = next_batch(
            graph,
            rng,
            batch_size=config.batch_size,
            num_negatives=config.num_negatives,
            walk_length=config.walk_length,
            only_source=only_source,
        )
        triple_plans, align_plans = _batch_plans(graph, batch, config, rng)
        present = sorted(triple_plans)
        proj = projections.at_step(step) if projections is not None else None

        if pmtl_target is None:
            lam_values = sample_lambda(max(len(present), 1), rng)
            lam = {j: float(lam_values[i]) for i, j in enumerate(present)}
            grads_model = zero_grads_like(params)
            grads_gate = zero_grads_like(gate_params) if gate_params is not None else None
            result = phase1_objective(
                params,
                gate_params,
                triple_plans,
                align_plans,
                lam,
                proj,
                beta,
                config,
                num_types,
                m,
                grads_model=grads_model,
                grads_gate=grads_gate,
            )
            losses, align = result.losses, result.align
        else:
            losses, per_grads = _per_source_losses_and_grads(
                params, triple_plans, config, num_types
            )
            weights = _preference_weights(losses, per_grads, pmtl_target, config)
            grads_model = zero_grads_like(params)
            for j, w in weights.items():
                _add_scaled(grads_model, per_grads[j], w)
            align = None
            grads_gate = None
            if beta > 0 and gate_params is not None and align_plans:
                grads_gate = zero_grads_like(gate_params)
                scaled = zero_grads_like(params)
                align = alignment_objective(
                    params,
                    gate_params,
                    align_plans,
                    proj,
                    config.model,
                    num_types,
                    m,
                    grads_model=scaled,
                    grads_gate=grads_gate,
                    cap=config.align_cap,
                )
                _add_scaled(grads_model, scaled, beta)
                for k in grads_gate:
                    grads_gate[k] *= beta

        opt.step(params, grads_model)
        if gate_opt is not None and grads_gate is not None:
            gate_opt.step(gate_params, grads_gate)
        history.record_step(step, m, losses, align)

        if (step + 1) % config.checkpoint_every == 0 or step == steps - 1:
            vec = harness.loss_vector(params)
            history.checkpoint_steps.append(step)
            history.checkpoint_losses.append(vec)
            track = (
                vec[only_source]
                if only_source is not None
                else float(np.nanmean(np.asarray(vec, dtype=float)))
            )
            checkpoint_loss_track.append(track)
            if _early_stop(checkpoint_loss_track, config.early_stop_patience):
                break
    return params, gate_params, history


def _preference_weights(losses, per_grads, target, config) -> dict[int, float]:
    present = sorted(losses)
    if target not in present:
        return {j: 1.0 / len(present) for j in present}
    loss_vec = [losses[j] for j in present]
    grad_mat = np.stack([_flatten(per_grads[j]) for j in present])
    pref = PreferenceVector(
        m=len(present), target=present.index(target), epsilon_pref=config.epsilon_pref
    )
    res = pmtl_weights(loss_vec, grad_mat, pref)
    return {j: float(res.weights[i]) for i, j in enumerate(present)}


def run_phase1(graph: MultiSourceGraph, config: TrainConfig, harness: EvalHarness) -> Phase1Result:
    """Front optimization: mixture-weighted losses plus the gated alignment."""
    m = graph.num_sources
    rng = _rng(config, _STREAM_PHASE1)
    params = init_model_params_for(graph, config, _rng(config, _STREAM_MODEL_INIT))
    beta = 0.0 if config.ablation == "align" else config.beta
    gate_params = None
    if m >= 2 and beta > 0:
        gate_params = init_gate_params(config.model.rep_dim, m, _rng(config, _STREAM_GATE_INIT))
    params, gate_params, history = _phase1_like_loop(
        graph,
        config,
        params=params,
        gate_params=gate_params,
        beta=beta if m >= 2 else 0.0,
        steps=config.phase1_steps,
        rng=rng,
        harness=harness,
    )
    frozen = None
    if gate_params is not None:
        frozen = params_hash(params) + ":" + params_hash(gate_params)
    return Phase1Result(params=params, gate_params=gate_params, history=history, frozen_hash=frozen)


def run_phase2(
    graph: MultiSourceGraph,
    frozen: Phase1Result,
    nu0: BaselineOptima,
    config: TrainConfig,
    target: int,
    harness: EvalHarness,
) -> Phase2Result:
    """Target-source optimization constrained by the frozen alignment model."""
    m = graph.num_sources
    num_types = len(graph.type_order)
    if not (0 <= target < m):
        raise ValueError("target source out of range")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _STREAM_PHASE2, target]))
    frozen_params = frozen.params
    frozen_gates_params = frozen.gate_params
    hash_before = (
        params_hash(frozen_params)
        + ":"
        + (params_hash(frozen_gates_params) if frozen_gates_params else "")
    )

    params = clone_params(frozen_params) if config.warm_start_phase2 else init_model_params_for(
        graph, config, np.random.default_rng(np.random.SeedSequence([config.seed, 77, target]))
    )
    opt = Adagrad(params, config.learning_rate)
    projections = (
        _ProjectionStream(config.model.rep_dim, config)
        if (config.beta > 0 and frozen_gates_params is not None and config.ablation != "align")
        else None
    )
    history = PhaseHistory()
    weights_history: list[list[float]] = []
    restricted_steps = 0
    min_target_alignment = float("inf")
    checkpoint_track: list[float] = []

    for step in range(config.phase2_steps):
        batch = next_batch(
            graph,
            rng,
            batch_size=config.batch_size,
            num_negatives=config.num_negatives,
            walk_length=config.walk_length,
        )
        triple_plans, align_plans = _batch_plans(graph, batch, config, rng)
        losses, per_grads = _per_source_losses_and_grads(params, triple_plans, config, num_types)
        present = sorted(losses)
        if not present:
            continue

        if config.ablation == "pareto" or target not in present:
            weights = {j: 1.0 / len(present) for j in present}
            restricted = False
            target_dot = float("nan")
        else:
            loss_vec = [losses[j] for j in present]
            grad_mat = np.stack([_flatten(per_grads[j]) for j in present])
            pref = PreferenceVector(
                m=len(present), target=present.index(target), epsilon_pref=config.epsilon_pref
            )
            res = pmtl_weights(loss_vec, grad_mat, pref)
            weights = {j: float(res.weights[i]) for i, j in enumerate(present)}
            restricted = res.restricted
            target_dot = float(res.direction @ grad_mat[present.index(target)])
            min_target_alignment = min(min_target_alignment, target_dot)
        restricted_steps += int(restricted)

        grads_model = zero_grads_like(params)
        for j, w in weights.items():
            _add_scaled(grads_model, per_grads[j], w)

        align_value = None
        if projections is not None and align_plans:
            proj = projections.at_step(step)
            frozen_reps = {}
            frozen_gate_values = {}
            for j, plans in align_plans.items():
                reps, _ = embed_forward(frozen_params, plans, "a", config.model, num_types)
                frozen_reps[j] = reps
                frozen_gate_values[j] = gate_forward(frozen_gates_params, reps)[0]
            scaled = zero_grads_like(params)
            align_value = frozen_alignment_loss(
                params,
                frozen_reps,
                frozen_gate_values,
                align_plans,
                proj,
                config.model,
                num_types,
                m,
                grads_model=scaled,
                cap=config.align_cap,
            )
            _add_scaled(grads_model, scaled, config.beta)

        opt.step(params, grads_model)
        history.steps.append(step)
        history.losses.append([losses.get(j) for j in range(m)])
        history.align_costs.append(align_value)
        history.gate_losses.append(None)
        history.pair_costs.append({})
        weights_history.append([weights.get(j, 0.0) for j in range(m)])

        if (step + 1) % config.checkpoint_every == 0 or step == config.phase2_steps - 1:
            vec = harness.loss_vector(params)
            history.checkpoint_steps.append(step)
            history.checkpoint_losses.append(vec)
            checkpoint_track.append(vec[target])
            if _early_stop(checkpoint_track, config.early_stop_patience):
                break

    hash_after = (
        params_hash(frozen_params)
        + ":"
        + (params_hash(frozen_gates_params) if frozen_gates_params else "")
    )
    if hash_after != hash_before:
        raise RuntimeError("frozen alignment state mutated during the second phase")

    final_losses = harness.loss_vector(params)
    report = tnt(final_losses, nu0)
    return Phase2Result(
        params=params,
        history=history,
        tnt=report,
        restricted_steps=restricted_steps,
        min_target_alignment=min_target_alignment,
        weights_history=weights_history,
    )


# ---------------------------------------------------------------------------
# nu0 caching
# ---------------------------------------------------------------------------


def load_nu0_cache(path, cfg_hash: str, seed: int) -> BaselineOptima | None:
    path = Path(path)
    if not path.exists():
        return None
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if payload.get("config_hash") != cfg_hash or payload.get("seed") != seed:
        return None
    return BaselineOptima(
        values=tuple(payload["values"]), seed=seed, config_hash=cfg_hash
    )


def save_nu0_cache(path, nu0: BaselineOptima) -> None:
    Path(path).write_text(
        json.dumps(
            {"config_hash": nu0.config_hash, "seed": nu0.seed, "values": list(nu0.values)},
            sort_keys=True,
            indent=1,
        )
        + "\n"
    )


# ---------------------------------------------------------------------------
# Full orchestration
# ---------------------------------------------------------------------------


def gate_statistics(
    graph: MultiSourceGraph,
    params: ModelParams,
    gate_params: GateParams,
    config: TrainConfig,
) -> dict[int, float]:
    """Mean gate value per category over every node and direction (inference plans)."""
    from .model import inference_rng

    num_types = len(graph.type_order)
    stats: dict[int, float] = {}
    for c in range(graph.num_categories):
        values = []
        for j, ids in enumerate(category_partition(graph, c)):
            if not ids:
                continue
            plans = [
                make_plan(graph, j, nid, config.model, inference_rng(config.eval_seed, j, nid), inference=True)
                for nid in ids
            ]
            reps, _ = embed_forward(params, plans, "a", config.model, num_types)
            gates, _ = gate_forward(gate_params, reps)
            values.append(gates.ravel())
        if values:
            stats[c] = float(np.concatenate(values).mean())
    return stats


def _front_metrics(population: list[list[float]], nu0: BaselineOptima, seed: int) -> dict:
    pts = np.asarray(population, dtype=float)
    base = np.asarray(nu0.values, dtype=float)
    clipped = np.maximum(pts, base)
    was_clipped = bool(np.any(pts < base))
    front_idx = pareto.extract_front(clipped)
    front_pts = clipped[front_idx]
    ceiling = clipped.max(axis=0)
    huf_res = pareto.huf(front_pts, base, ceiling=ceiling, seed=seed)
    return {
        "population": [[float(x) for x in row] for row in pts],
        "front_indices": [int(i) for i in front_idx],
        "clipped_to_baseline": was_clipped,
        "ceiling": [float(x) for x in ceiling],
        "huf": {
            "volume": huf_res.volume,
            "stderr": huf_res.stderr,
            "method": huf_res.method,
        },
        "convexity_fraction": pareto.convexity_fraction(front_pts, seed=seed),
    }


def _history_dict(history: PhaseHistory) -> dict:
    return {
        "steps": history.steps,
        "losses": history.losses,
        "align_costs": history.align_costs,
        "gate_losses": history.gate_losses,
        "checkpoint_steps": history.checkpoint_steps,
        "checkpoint_losses": history.checkpoint_losses,
    }


def _mean_tail_pair_costs(history: PhaseHistory) -> dict[str, float]:
    tail = history.pair_costs[-max(1, len(history.pair_costs) // 4):]
    keys = sorted({k for d in tail for k in d})
    return {
        k: float(np.mean([d[k] for d in tail if k in d])) for k in keys if any(k in d for d in tail)
    }


def run_icpa(
    graph: MultiSourceGraph,
    config: TrainConfig,
    nu0_cache_path=None,
) -> dict:
    """End-to-end run: per-source baselines (nu0), phase 1, phase 2 per target,
    negative-transfer accounting, and front/gate diagnostics, as a report dict."""
    timings: dict[str, float] = {}
    t_start = time.perf_counter()
    m = graph.num_sources
    cfg_hash = config_hash(config)
    harness = EvalHarness(graph, config)

    nu0 = None
    if nu0_cache_path is not None:
        nu0 = load_nu0_cache(nu0_cache_path, cfg_hash, config.seed)
    nu0_from_cache = nu0 is not None
    soo_histories = {}
    if nu0 is None:
        t0 = time.perf_counter()
        values = []
        for j in range(m):
            soo = run_soo(graph, j, config, harness)
            values.append(soo.final_loss)
            soo_histories[j] = _history_dict(soo.history)
        nu0 = BaselineOptima(values=tuple(values), seed=config.seed, config_hash=cfg_hash)
        timings["soo"] = time.perf_counter() - t0
        if nu0_cache_path is not None:
            save_nu0_cache(nu0_cache_path, nu0)

    report: dict = {
        "config": config_to_dict(config),
        "config_hash": cfg_hash,
        "seed": config.seed,
        "num_sources": m,
        "ablation": config.ablation,
        "nu0": {
            "values": list(nu0.values),
            "seed": nu0.seed,
            "config_hash": nu0.config_hash,
            "from_cache": nu0_from_cache,
        },
        "soo": soo_histories,
        "ndcg_gain": "linear",
    }

    if m == 1:
        report["tnt"] = {"0": {"epsilon": [0.0], "target_epsilon": 0.0}}
        report["phase1"] = None
        report["phase2"] = {}
        report["front"] = None
        report["gate_stats"] = {}
        report["alignment_costs"] = {}
        return report

    population: list[list[float]] = []
    phase2_reports: dict[str, dict] = {}
    tnt_reports: dict[str, dict] = {}

    if config.ablation == "front":
        report["phase1"] = None
        report["gate_stats"] = {}
        report["alignment_costs"] = {}
        for target in config.targets:
            t0 = time.perf_counter()
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, _STREAM_PHASE2, target])
            )
            params = init_model_params_for(graph, config, _rng(config, _STREAM_MODEL_INIT))
            gate_params = init_gate_params(
                config.model.rep_dim, m, _rng(config, _STREAM_GATE_INIT)
            )
            steps = config.phase1_steps + config.phase2_steps
            params, gate_params, history = _phase1_like_loop(
                graph,
                config,
                params=params,
                gate_params=gate_params,
                beta=config.beta,
                steps=steps,
                rng=rng,
                harness=harness,
                pmtl_target=target,
            )
            timings[f"front_ablation_{target}"] = time.perf_counter() - t0
            final = harness.loss_vector(params)
            eps = tnt(final, nu0)
            key = str(target)
            phase2_reports[key] = {
                "history": _history_dict(history),
                "final_losses": final,
                "restricted_steps": None,
                "min_target_alignment": None,
            }
            tnt_reports[key] = {
                "epsilon": list(eps.epsilon),
                "target_epsilon": eps.epsilon[target],
            }
            population.extend(history.checkpoint_losses)
            report["gate_stats"] = gate_statistics(graph, params, gate_params, config)
    else:
        t0 = time.perf_counter()
        phase1 = run_phase1(graph, config, harness)
        timings["phase1"] = time.perf_counter() - t0
        population.extend(phase1.history.checkpoint_losses)
        report["phase1"] = {
            "history": _history_dict(phase1.history),
            "frozen_hash": phase1.frozen_hash,
        }
        report["alignment_costs"] = _mean_tail_pair_costs(phase1.history)
        report["gate_stats"] = (
            gate_statistics(graph, phase1.params, phase1.gate_params, config)
            if phase1.gate_params is not None
            else {}
        )
        for target in config.targets:
            t0 = time.perf_counter()
            p2 = run_phase2(graph, phase1, nu0, config, target, harness)
            timings[f"phase2_{target}"] = time.perf_counter() - t0
            key = str(target)
            phase2_reports[key] = {
                "history": _history_dict(p2.history),
                "final_losses": harness.loss_vector(p2.params),
                "restricted_steps": p2.restricted_steps,
                "min_target_alignment": (
                    None if not np.isfinite(p2.min_target_alignment) else p2.min_target_alignment
                ),
                "weights_history": p2.weights_history,
            }
            tnt_reports[key] = {
                "epsilon": list(p2.tnt.epsilon),
                "target_epsilon": p2.tnt.epsilon[target],
            }
            population.extend(p2.history.checkpoint_losses)

    report["phase2"] = phase2_reports
    report["tnt"] = tnt_reports
    report["front"] = _front_metrics(population, nu0, seed=config.seed) if population else None
    report["timings"] = timings  # stripped before deterministic serialization
    report["total_wall_time"] = time.perf_counter() - t_start
    return report


def split_deterministic_report(report: dict) -> tuple[dict, dict]:
    """Separate the reproducible report from wall-clock timings."""
    deterministic = {k: v for k, v in report.items() if k not in ("timings", "total_wall_time")}
    timings = {
        "timings": report.get("timings", {}),
        "total_wall_time": report.get("total_wall_time"),
    }
    return deterministic, timings
