"""Anchor selection, contrastive objectives, and the training loop.

Each view elects an anchor node (highest mean cosine similarity to its
neighbors); nodes close to the anchor form the view's positive set and
nodes far from it the negative pool. The local loss pulls a positive
node's embeddings together across view pairs against sampled negatives;
the global loss does the same for per-view mean embeddings against
feature-shuffled corruptions. Training couples both with L2 weight decay
under an adaptive-moment optimizer.

Sampling (negatives, corruption permutations) happens outside the
differentiable graph and is refreshed on a fixed epoch period, so between
refreshes the loss is a fixed differentiable function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import attention as att
from . import autodiff as ad
from .graph import CriterionView


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.5
    alpha: float = 0.5
    beta: float = 0.5
    l2_weight: float = 0.1
    num_negatives: int = 5
    pos_threshold: float = 0.5
    neg_threshold: float = 0.3

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.num_negatives < 1:
            raise ValueError(f"need at least one negative, got {self.num_negatives}")
        if self.neg_threshold > self.pos_threshold:
            raise ValueError("neg_threshold must not exceed pos_threshold")


@dataclass(frozen=True)
class LossReport:
    epoch: int
    l_lcl: float
    l_hgcl: float
    l2_term: float
    l_total: float


@dataclass(frozen=True, eq=False)
class AnchorSet:
    anchor: int
    positives: np.ndarray       # nodes with cosine-to-anchor >= pos_threshold
    negative_pool: np.ndarray   # nodes with cosine-to-anchor < neg_threshold
    eligible: np.ndarray        # non-isolated nodes (anchor contention domain)


@dataclass(frozen=True, eq=False)
class PairSample:
    """LCL structure for one ordered view pair: who contrasts against whom."""
    view_a: int
    view_b: int
    positives: np.ndarray          # (p,) node indices, view_a's positive set
    negatives: np.ndarray | None   # (p, K) node indices into view_b, None if none exist


@dataclass(frozen=True, eq=False)
class ContrastPlan:
    anchor_sets: tuple[AnchorSet, ...]
    samples: tuple[PairSample, ...]
    permutations: dict  # (view_a, view_b) -> (K, n, d) within-row column indices


class NonFiniteLossError(RuntimeError):
    def __init__(self, epoch: int, last_report: LossReport | None):
        detail = (f"last finite report: {last_report}" if last_report
                  else "no finite epoch completed")
        super().__init__(f"loss became non-finite at epoch {epoch}; {detail}")
        self.epoch = epoch
        self.last_report = last_report


# ---------------------------------------------------------------------------
# anchors

def _unit_rows(embeddings: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    return np.divide(embeddings, norms, out=np.zeros_like(embeddings),
                     where=norms > 0)


def neighborhood_similarities(view: CriterionView,
                              embeddings: np.ndarray) -> np.ndarray:
    """Mean cosine similarity of each node to its neighbors; -inf if isolated."""
    centers, neighbors = view.neighbor_arrays()
    unit = _unit_rows(embeddings)
    edge_sims = np.einsum("ij,ij->i", unit[centers], unit[neighbors])
    totals = np.bincount(centers, weights=edge_sims, minlength=view.num_nodes)
    counts = np.bincount(centers, minlength=view.num_nodes)
    out = np.full(view.num_nodes, -np.inf)
    rated = counts > 0
    out[rated] = totals[rated] / counts[rated]
    return out


def neighborhood_similarity(view: CriterionView, embeddings: np.ndarray,
                            node: int) -> float:
    return float(neighborhood_similarities(view, embeddings)[node])


def select_anchor(view: CriterionView, embeddings: np.ndarray) -> int:
    """Node with the highest neighborhood similarity; ties pick the lowest index."""
    sims = neighborhood_similarities(view, embeddings)
    if np.all(np.isneginf(sims)):
        raise ValueError(
            f"view {view.criterion_index}: every node is isolated, no anchor exists")
    return int(np.argmax(sims))


def build_anchor_set(view: CriterionView, embeddings: np.ndarray,
                     cfg: LossConfig) -> AnchorSet:
    sims = neighborhood_similarities(view, embeddings)
    anchor = select_anchor(view, embeddings)
    eligible = ~np.isneginf(sims)
    unit = _unit_rows(embeddings)
    to_anchor = unit @ unit[anchor]

    positive_mask = eligible & (to_anchor >= cfg.pos_threshold)
    positive_mask[anchor] = True
    pool_mask = eligible & (to_anchor < cfg.neg_threshold) & ~positive_mask
    return AnchorSet(anchor=anchor,
                     positives=np.flatnonzero(positive_mask),
                     negative_pool=np.flatnonzero(pool_mask),
                     eligible=np.flatnonzero(eligible))


# ---------------------------------------------------------------------------
# sampling structure

def _ordered_pairs(num_views: int):
    for a in range(num_views):
        for b in range(num_views):
            if a != b:
                yield a, b


def sample_pair_negatives(anchor_sets: Sequence[AnchorSet], cfg: LossConfig,
                          rng: np.random.Generator) -> tuple[PairSample, ...]:
    """Draw K negatives per (positive, ordered pair) from the partner's pool.

    A pair's positives are view_a's positive set restricted to nodes that are
    also non-isolated in view_b; a node with no neighbors in the partner view
    has a zero embedding there and no defined contrast. An empty pool falls
    back to the partner view's non-positive nodes; if that is empty too the
    pair carries no negatives and its terms are zero.
    """
    samples = []
    for a, b in _ordered_pairs(len(anchor_sets)):
        positives = np.intersect1d(anchor_sets[a].positives,
                                   anchor_sets[b].eligible)
        pool = anchor_sets[b].negative_pool
        if pool.size == 0:
            pool = np.setdiff1d(anchor_sets[b].eligible, anchor_sets[b].positives)
        if pool.size == 0:
            negatives = None
        else:
            draws = rng.integers(0, pool.size,
                                 size=(positives.size, cfg.num_negatives))
            negatives = pool[draws]
        samples.append(PairSample(a, b, positives, negatives))
    return tuple(samples)


def sample_permutations(num_views: int, shape: tuple[int, int], cfg: LossConfig,
                        rng: np.random.Generator) -> dict:
    """Fresh within-row column permutations per ordered pair, K per term."""
    n, d = shape
    perms = {}
    for a, b in _ordered_pairs(num_views):
        perms[(a, b)] = np.argsort(rng.random((cfg.num_negatives, n, d)), axis=2)
    return perms


def build_plan(views: Sequence[CriterionView], embeddings: Sequence[np.ndarray],
               cfg: LossConfig, rng: np.random.Generator) -> ContrastPlan:
    anchor_sets = tuple(build_anchor_set(v, e, cfg)
                        for v, e in zip(views, embeddings))
    samples = sample_pair_negatives(anchor_sets, cfg, rng)
    perms = sample_permutations(len(views), embeddings[0].shape, cfg, rng)
    return ContrastPlan(anchor_sets, samples, perms)


# ---------------------------------------------------------------------------
# losses (tensor level)

def lcl_tensor(embeddings: Sequence[ad.Tensor], samples: Sequence[PairSample],
               cfg: LossConfig) -> ad.Tensor:
    """Mean InfoNCE term over every (positive node, ordered view pair)."""
    inv_t = 1.0 / cfg.temperature
    term_count = 0
    total = None
    for ps in samples:
        term_count += ps.positives.size
        if ps.negatives is None or ps.positives.size == 0:
            continue  # terms exist but are exactly -log(1) = 0
        p, k = ps.negatives.shape
        e_a = ad.take_rows(embeddings[ps.view_a], ps.positives)
        e_b = ad.take_rows(embeddings[ps.view_b], ps.positives)
        sim_pos = ad.cosine_rows(e_a, e_b)

        rep = np.repeat(np.arange(p), k)
        sim_neg = ad.cosine_rows(ad.take_rows(e_a, rep),
                                 ad.take_rows(embeddings[ps.view_b],
                                              ps.negatives.ravel()))
        pos_exp = ad.texp(sim_pos * inv_t)
        neg_sum = ad.segment_sum(ad.texp(sim_neg * inv_t), rep, p)
        terms = ad.tlog(pos_exp + neg_sum) - sim_pos * inv_t
        contribution = ad.tsum(terms)
        total = contribution if total is None else total + contribution
    if total is None or term_count == 0:
        return ad.Tensor(0.0)
    return total * (1.0 / term_count)


def hgcl_tensor(embeddings: Sequence[ad.Tensor], permutations: Mapping,
                cfg: LossConfig) -> ad.Tensor:
    """Mean InfoNCE term over ordered view pairs of column-mean embeddings."""
    inv_t = 1.0 / cfg.temperature
    total = None
    count = 0
    means = [ad.tmean(e, axis=0) for e in embeddings]
    for a, b in _ordered_pairs(len(embeddings)):
        count += 1
        sim_pos = ad.cosine_vec(means[a], means[b])
        pos_exp = ad.texp(sim_pos * inv_t)
        denom = pos_exp
        for perm in permutations[(a, b)]:
            corrupted = ad.tmean(ad.permute_within_rows(embeddings[a], perm), axis=0)
            denom = denom + ad.texp(ad.cosine_vec(means[a], corrupted) * inv_t)
        term = ad.tlog(denom) - sim_pos * inv_t
        total = term if total is None else total + term
    if total is None:
        return ad.Tensor(0.0)
    return total * (1.0 / count)


# ---------------------------------------------------------------------------
# losses (numpy convenience)

def local_contrastive_loss(embeddings: Sequence[np.ndarray],
                           anchor_sets: Sequence[AnchorSet], cfg: LossConfig,
                           seed: int = 0,
                           samples: Sequence[PairSample] | None = None) -> float:
    if len(embeddings) < 2:
        raise ValueError("local contrastive loss needs at least two views")
    if samples is None:
        samples = sample_pair_negatives(anchor_sets, cfg,
                                        np.random.default_rng(seed))
    return float(lcl_tensor([ad.Tensor(e) for e in embeddings], samples, cfg).value)


def global_contrastive_loss(embeddings: Sequence[np.ndarray], cfg: LossConfig,
                            seed: int = 0,
                            permutations: Mapping | None = None) -> float:
    if len(embeddings) < 2:
        raise ValueError("global contrastive loss needs at least two views")
    if permutations is None:
        permutations = sample_permutations(len(embeddings), embeddings[0].shape,
                                           cfg, np.random.default_rng(seed))
    return float(hgcl_tensor([ad.Tensor(e) for e in embeddings],
                             permutations, cfg).value)


def total_loss(l_lcl: float, l_hgcl: float, params: Mapping[str, np.ndarray],
               cfg: LossConfig, epoch: int = 0) -> LossReport:
    """Weighted combination; the report identity holds exactly as computed."""
    l2 = 0.0
    for arr in params.values():
        l2 += float((arr * arr).sum())
    total = cfg.alpha * l_lcl + cfg.beta * l_hgcl + cfg.l2_weight * l2
    return LossReport(epoch=epoch, l_lcl=l_lcl, l_hgcl=l_hgcl,
                      l2_term=l2, l_total=total)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients jointly so their global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                state: AdamState, learning_rate: float,
                beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> None:
    state.step += 1
    t = state.step
    for key, grad in grads.items():
        m = state.first.setdefault(key, np.zeros_like(grad))
        v = state.second.setdefault(key, np.zeros_like(grad))
        m += (1.0 - beta1) * (grad - m)
        v += (1.0 - beta2) * (grad * grad - v)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        params[key] -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# training loop

@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = LossConfig()
    encoder: att.EncoderConfig = att.EncoderConfig()
    learning_rate: float = 0.005
    epochs: int = 200
    refresh_period: int = 10
    clip_norm: float = 5.0
    use_global_attention: bool = True
    use_contrastive: bool = True

    def variant(self, name: str) -> "TrainConfig":
        """Named ablations: full, no_global_attention, no_global_attention_no_cl."""
        if name == "full":
            return replace(self, use_global_attention=True, use_contrastive=True)
        if name == "no_global_attention":
            return replace(self, use_global_attention=False, use_contrastive=True)
        if name == "no_global_attention_no_cl":
            return replace(self, use_global_attention=False, use_contrastive=False)
        raise ValueError(f"unknown variant {name!r}")


def train(views: Sequence[CriterionView], cfg: TrainConfig, seed: int,
          epochs: int | None = None
          ) -> tuple[dict[str, np.ndarray], list[LossReport]]:
    """Optimize encoder parameters on the views; deterministic per seed."""
    epochs = cfg.epochs if epochs is None else epochs
    num_nodes = views[0].num_nodes
    params = att.init_params(num_nodes, len(views), cfg.encoder, seed)
    state = AdamState()
    trace: list[LossReport] = []
    plan: ContrastPlan | None = None
    use_cl = cfg.use_contrastive and len(views) >= 2

    for epoch in range(epochs):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            tensors = {key: ad.Tensor(value) for key, value in params.items()}
            embeddings = [att.encode_view_tensors(view, tensors, cfg.encoder,
                                                  cfg.use_global_attention)
                          for view in views]
            if use_cl and (plan is None or epoch % cfg.refresh_period == 0):
                plan = build_plan(views, [e.value for e in embeddings], cfg.loss,
                                  np.random.default_rng([seed, epoch]))
            if use_cl:
                lcl = lcl_tensor(embeddings, plan.samples, cfg.loss)
                hgcl = hgcl_tensor(embeddings, plan.permutations, cfg.loss)
            else:
                lcl = ad.Tensor(0.0)
                hgcl = ad.Tensor(0.0)
            l2 = ad.sum_of_squares(tensors.values())
            total = lcl * cfg.loss.alpha + hgcl * cfg.loss.beta + l2 * cfg.loss.l2_weight

            report = LossReport(epoch=epoch + 1, l_lcl=float(lcl.value),
                                l_hgcl=float(hgcl.value), l2_term=float(l2.value),
                                l_total=float(total.value))
            if not np.isfinite(report.l_total):
                raise NonFiniteLossError(epoch + 1, trace[-1] if trace else None)
            trace.append(report)

            ad.backward(total)
            grads = {key: ad.grad_of(tensor) for key, tensor in tensors.items()}
        clip_gradients(grads, cfg.clip_norm)
        adam_update(params, grads, state, cfg.learning_rate)
    return params, trace


def write_loss_trace(trace: Sequence[LossReport], path: str | Path) -> None:
    lines = ["epoch,l_lcl,l_hgcl,l2,l_total"]
    for r in trace:
        lines.append(f"{r.epoch},{r.l_lcl!r},{r.l_hgcl!r},{r.l2_term!r},{r.l_total!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
