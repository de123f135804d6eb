"""Synthetic chronic-care cohorts with outcome-window labeling.

Each patient is an event stream: dated visits carrying abstract diagnosis
(DX), drug (RX), and complication (CPL) codes, plus gender and age. An
index diagnosis at day T0 opens a treatment window of ``years_plan``
years; the following ``years_outcome`` years form the outcome window. A
case is a failure when any complication code occurs inside the outcome
window (exclusive of its start, inclusive of its end), otherwise a
success.

Class signal comes from planted motifs: a short ordered chain of codes per
class inserted into the treatment window. With ``motif_strength`` p, the
outcome follows the planted class with probability p. Noise modes mimic
claim-database pathologies: visits split into same-day fragments, dropped
codes, and duplicated visits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .graphdata import PatientGraph, Vocabulary

DAYS_PER_YEAR = 365

GENDER_CODES = ("SEX:F", "SEX:M")
INDEX_CODE = "DX:IDX"


@dataclass
class CohortConfig:
    n_patients: int = 1000
    n_diagnosis_codes: int = 24
    n_drug_codes: int = 16
    n_complication_codes: int = 4
    years_plan: float = 1.0
    years_outcome: float = 10.0
    failure_rate: float = 0.25
    motif_strength: float = 0.95
    split_rate: float = 0.1
    drop_rate: float = 0.1
    duplicate_rate: float = 0.1
    motif_drop_rate: float = 0.0
    distractor_rate: float = 0.08
    seed: int = 0
    # class label -> ordered code chain planted in the treatment window
    motifs: dict[int, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.motifs:
            self.motifs = {
                0: ["DX:00", "RX:00", "DX:01"],
                1: ["DX:02", "RX:01", "DX:03"],
            }
        if self.years_plan <= 0 or self.years_outcome <= 0:
            raise DataError("observation windows must be positive")
        for name in ("failure_rate", "motif_strength", "split_rate", "drop_rate",
                     "duplicate_rate", "motif_drop_rate", "distractor_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {v}")

    @property
    def plan_days(self) -> int:
        return int(round(self.years_plan * DAYS_PER_YEAR))

    @property
    def outcome_days(self) -> int:
        return int(round(self.years_outcome * DAYS_PER_YEAR))


@dataclass
class EventStream:
    """Time-ordered visits for one patient; each visit is (day, code ids)."""

    patient_id: str
    events: list[tuple[int, tuple[int, ...]]]
    gender_code: int
    age_years: float


def vocabulary(cfg: CohortConfig) -> Vocabulary:
    codes = list(GENDER_CODES) + [INDEX_CODE]
    codes += [f"DX:{i:02d}" for i in range(cfg.n_diagnosis_codes)]
    codes += [f"RX:{i:02d}" for i in range(cfg.n_drug_codes)]
    codes += [f"CPL:{i}" for i in range(cfg.n_complication_codes)]
    return Vocabulary(codes)


def _motif_ids(cfg: CohortConfig, vocab: Vocabulary) -> dict[int, list[int]]:
    out = {}
    for label, chain in cfg.motifs.items():
        ids = []
        for code in chain:
            if code not in vocab:
                raise DataError(f"motif code {code!r} outside the vocabulary")
            ids.append(vocab.id(code))
        out[label] = ids
    return out


def _noise_pools(cfg: CohortConfig, vocab: Vocabulary) -> tuple[list[int], list[int]]:
    motif_codes = {c for chain in cfg.motifs.values() for c in chain}
    dx = [vocab.id(f"DX:{i:02d}") for i in range(cfg.n_diagnosis_codes)
          if f"DX:{i:02d}" not in motif_codes]
    rx = [vocab.id(f"RX:{i:02d}") for i in range(cfg.n_drug_codes)
          if f"RX:{i:02d}" not in motif_codes]
    return dx, rx


def generate_cohort(cfg: CohortConfig) -> list[EventStream]:
    """Deterministic cohort for a given config; one rng substream per patient."""
    if cfg.n_patients < 1:
        raise DataError("n_patients must be at least 1")
    vocab = vocabulary(cfg)
    motif_ids = _motif_ids(cfg, vocab)
    if set(motif_ids) != {0, 1}:
        raise DataError("motifs must define exactly the classes 0 and 1")
    dx_pool, rx_pool = _noise_pools(cfg, vocab)
    cpl_ids = [vocab.id(f"CPL:{i}") for i in range(cfg.n_complication_codes)]
    index_id = vocab.id(INDEX_CODE)

    streams = []
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_patients)
    for pi in range(cfg.n_patients):
        rng = np.random.default_rng(seeds[pi])
        streams.append(_generate_patient(
            f"p{pi:05d}", cfg, rng, motif_ids, dx_pool, rx_pool, cpl_ids, index_id))
    return streams


def _random_codes(rng, dx_pool, rx_pool, k: int) -> list[int]:
    pool = dx_pool if rng.random() < 0.6 else rx_pool
    k = min(k, len(pool))
    return list(rng.choice(pool, size=k, replace=False))


def _generate_patient(pid, cfg, rng, motif_ids, dx_pool, rx_pool, cpl_ids, index_id):
    planted = 0 if rng.random() < cfg.failure_rate else 1
    t0 = int(rng.integers(180, 720))
    t_plan = t0 + cfg.plan_days
    t_outcome = t_plan + cfg.outcome_days

    visits: list[tuple[int, list[int]]] = []
    for day in sorted(rng.integers(0, t0, size=int(rng.integers(2, 7)))):
        visits.append((int(day), _random_codes(rng, dx_pool, rx_pool, int(rng.integers(1, 4)))))
    visits.append((t0, [index_id] + _random_codes(rng, dx_pool, rx_pool, 1)))

    plan_days = sorted(rng.integers(t0 + 1, t_plan + 1, size=int(rng.integers(3, 8))))
    plan_visits = [(int(day), _random_codes(rng, dx_pool, rx_pool, int(rng.integers(1, 3))))
                   for day in plan_days]
    # plant the class motif as an ordered chain across distinct treatment visits
    chain = motif_ids[planted]
    anchors = sorted(rng.choice(len(plan_visits), size=min(len(chain), len(plan_visits)),
                                replace=False))
    for code, vi in zip(chain, anchors):
        if rng.random() >= cfg.motif_drop_rate:
            plan_visits[vi][1].append(code)
    visits.extend(plan_visits)

    # outcome follows the planted class with probability motif_strength
    failed = (planted == 0) == (rng.random() < cfg.motif_strength)
    if failed:
        day = int(rng.integers(t_plan + 1, t_outcome + 1))
        visits.append((day, [int(rng.choice(cpl_ids))]))
    if rng.random() < cfg.distractor_rate:
        # complication strictly before the treatment window closes; must not flip the label
        day = int(rng.integers(max(1, t0 - 90), t_plan + 1))
        visits.append((day, [int(rng.choice(cpl_ids))]))

    visits = _apply_noise(visits, cfg, rng, keep={index_id})
    events = sorted((day, tuple(sorted(set(codes)))) for day, codes in visits if codes)
    return EventStream(patient_id=pid, events=events,
                       gender_code=int(rng.integers(0, 2)),
                       age_years=float(rng.integers(40, 86)))


def _apply_noise(visits, cfg, rng, keep):
    noisy = []
    for day, codes in visits:
        codes = [c for c in codes
                 if c in keep or rng.random() >= cfg.drop_rate]
        if not codes:
            continue
        if len(codes) >= 2 and rng.random() < cfg.split_rate:
            cut = int(rng.integers(1, len(codes)))
            noisy.append((day, codes[:cut]))
            noisy.append((day, codes[cut:]))
        else:
            noisy.append((day, codes))
        if rng.random() < cfg.duplicate_rate:
            noisy.append((day + int(rng.integers(0, 2)), list(codes)))
    return noisy


def label_outcome(stream: EventStream, cfg: CohortConfig) -> int:
    """1 (success) unless a complication falls in (T_plan, T_outcome]."""
    vocab = vocabulary(cfg)
    index_id = vocab.id(INDEX_CODE)
    cpl = {vocab.id(f"CPL:{i}") for i in range(cfg.n_complication_codes)}
    t0 = None
    for day, codes in stream.events:
        if index_id in codes:
            t0 = day
            break
    if t0 is None:
        raise DataError(f"stream {stream.patient_id}: no index diagnosis")
    t_plan = t0 + cfg.plan_days
    t_outcome = t_plan + cfg.outcome_days
    for day, codes in stream.events:
        if t_plan < day <= t_outcome and cpl & set(codes):
            return 0
    return 1


def stream_to_graph(stream: EventStream, cfg: CohortConfig) -> PatientGraph:
    """Events up to T_plan become a DAG: gender node, then chained visit anchors.

    The gender node links to the first visit anchor weighted by age in
    years; consecutive anchors link with their day difference; codes
    sharing a visit hang off the anchor with weight-0 edges.
    """
    label = label_outcome(stream, cfg)
    vocab = vocabulary(cfg)
    index_id = vocab.id(INDEX_CODE)
    t0 = next(day for day, codes in stream.events if index_id in codes)
    t_plan = t0 + cfg.plan_days

    kept = [(day, codes) for day, codes in stream.events if day <= t_plan]
    if not kept:
        raise DataError(f"stream {stream.patient_id}: no events at or before the treatment window end")

    nodes = [stream.gender_code]
    edges: list[tuple[int, int, float]] = []
    prev_anchor = None
    prev_day = None
    for day, codes in kept:
        anchor = len(nodes)
        nodes.append(codes[0])
        if prev_anchor is None:
            edges.append((0, anchor, float(stream.age_years)))
        else:
            edges.append((prev_anchor, anchor, float(day - prev_day)))
        for code in codes[1:]:
            edges.append((anchor, len(nodes), 0.0))
            nodes.append(code)
        prev_anchor, prev_day = anchor, day
    return PatientGraph(graph_id=stream.patient_id, nodes=nodes, edges=edges, label=label)


def cohort_to_graphs(streams, cfg: CohortConfig) -> list[PatientGraph]:
    return [stream_to_graph(s, cfg) for s in streams]


def split_cohort(graphs, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffled train/validation/test split."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise DataError("fractions must be three values summing to 1")
    order = np.random.default_rng(seed).permutation(len(graphs))
    n_train = int(round(fractions[0] * len(graphs)))
    n_val = int(round(fractions[1] * len(graphs)))
    pick = lambda idx: [graphs[i] for i in idx]
    return (pick(order[:n_train]),
            pick(order[n_train:n_train + n_val]),
            pick(order[n_train + n_val:]))


def high_noise_variant(cfg: CohortConfig) -> CohortConfig:
    """Same cohort family under heavier claim-noise and weaker signal."""
    return replace(cfg, split_rate=0.35, drop_rate=0.3, duplicate_rate=0.35,
                   motif_drop_rate=0.2, motif_strength=0.9, failure_rate=0.18,
                   seed=cfg.seed + 9000)


def cohort_stats(graphs) -> str:
    """Plain-text cohort summary: class balance plus node/edge ranges."""
    n = len(graphs)
    failures = sum(1 for g in graphs if g.label == 0)
    nodes = np.array([g.num_nodes for g in graphs])
    edges = np.array([len(g.edges) for g in graphs])
    lines = [
        "cohort statistics",
        f"graphs          {n}",
        f"failure cases   {failures} ({failures / n:.1%})",
        f"success cases   {n - failures} ({(n - failures) / n:.1%})",
        f"nodes  min/avg/max   {nodes.min()}/{nodes.mean():.1f}/{nodes.max()}",
        f"edges  min/avg/max   {edges.min()}/{edges.mean():.1f}/{edges.max()}",
    ]
    return "\n".join(lines) + "\n"
