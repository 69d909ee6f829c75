"""Offline matching metrics and the baseline comparison protocol."""

from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ConfigurationError, InvalidArgumentError
from .features import Item, TrainingInstance
from .model import FitNet
from .retrieval import RetrievalIndex, build_index, user_vector

K_GRID = (3, 10, 20, 50)
METHODS = ("fitnet", "fitnet-minus", "avgpool", "orderdest2i")

# user -> ranked item ids (at least k of them)
Retriever = Callable[[TrainingInstance, int], Sequence[str]]


@dataclass
class EvalReport:
    method: str
    hit_rate: dict[int, float]
    precision: dict[int, float]
    n_cases: int
    n_users: int

    def __post_init__(self):
        for name, table in (("hit_rate", self.hit_rate), ("precision", self.precision)):
            for k, v in table.items():
                if not 0.0 <= v <= 1.0:
                    raise InvalidArgumentError(f"{name}@{k} = {v} outside [0, 1]")
        ks = sorted(self.hit_rate)
        for a, b in zip(ks, ks[1:]):
            if self.hit_rate[b] < self.hit_rate[a]:
                raise InvalidArgumentError(f"{self.method}: HitRate@{b} < HitRate@{a}")

    def rows(self) -> list[tuple[str, int, float, float]]:
        return [(self.method, k, self.hit_rate[k], self.precision[k]) for k in sorted(self.hit_rate)]


def hit_rate_at_k(test_cases: Sequence[tuple[TrainingInstance, str]], retriever: Retriever, k: int) -> float:
    """Fraction of (user, target item id) cases whose target is in the user's top-k."""
    if not test_cases:
        raise InvalidArgumentError("hit rate needs at least one test case")
    hits = sum(1 for user, target in test_cases if target in set(retriever(user, k)[:k]))
    return hits / len(test_cases)


def precision_at_k(
    users: Sequence[TrainingInstance],
    retriever: Retriever,
    ground_truth_clicks: Mapping[str, set[str]],
    k: int,
) -> float:
    """Mean over users of |top-k intersect clicked| / k."""
    if not users:
        raise InvalidArgumentError("precision needs at least one user")
    # integer count, one division: exact and independent of summation order
    hits = 0
    for user in users:
        hits += len(set(retriever(user, k)[:k]) & ground_truth_clicks[user.user_id])
    return hits / (k * len(users))


def ctr(clicks: int, impressions: int) -> float:
    if impressions < 1:
        raise InvalidArgumentError("CTR needs at least one impression")
    if clicks < 0 or clicks > impressions:
        raise InvalidArgumentError(f"impossible counts: {clicks} clicks for {impressions} impressions")
    return clicks / impressions


# --------------------------------------------------------------------------
# test protocol
# --------------------------------------------------------------------------


@dataclass
class TestSplit:
    """Held-out users, their (user, target) cases and ground-truth click sets."""

    users: list[TrainingInstance]
    cases: list[tuple[TrainingInstance, str]]
    clicks: dict[str, set[str]] = field(default_factory=dict)


def build_test_split(test_corpus: Iterable[TrainingInstance]) -> TestSplit:
    """One case per clicked target; users ordered by id.

    Ground truth excludes anything already in the user's behaviour sequence.
    """
    users: dict[str, TrainingInstance] = {}
    clicks: dict[str, set[str]] = {}
    cases = []
    for inst in test_corpus:
        if inst.target is None or inst.label_click != 1:
            continue
        seen = {b.item_id for b in inst.behavior}
        if inst.target.item_id in seen:
            continue
        users.setdefault(inst.user_id, inst.with_target(None))
        clicks.setdefault(inst.user_id, set()).add(inst.target.item_id)
        cases.append((users[inst.user_id], inst.target.item_id))
    ordered = [users[u] for u in sorted(users)]
    cases.sort(key=lambda c: (c[0].user_id, c[1]))
    return TestSplit(ordered, cases, clicks)


class RankingCache:
    """Memoises each user's top-``depth`` list so every k reuses one query."""

    def __init__(self, rank_fn: Callable[[TrainingInstance], list[str]], depth: int):
        self.rank_fn = rank_fn
        self.depth = depth
        self.cache: dict[str, list[str]] = {}

    def prefetch(self, users: Sequence[TrainingInstance], threads: int = 1) -> None:
        todo = [u for u in users if u.user_id not in self.cache]
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(threads) as ex:
                results = list(ex.map(self.rank_fn, todo))
        else:
            results = [self.rank_fn(u) for u in todo]
        # reduce in user order so the cache is independent of scheduling
        for u, r in zip(todo, results):
            self.cache[u.user_id] = r

    def __call__(self, user: TrainingInstance, k: int) -> list[str]:
        if k > self.depth:
            raise InvalidArgumentError(f"k={k} exceeds cached depth {self.depth}")
        if user.user_id not in self.cache:
            self.cache[user.user_id] = self.rank_fn(user)
        return self.cache[user.user_id][:k]


def model_retriever(model: FitNet, index: RetrievalIndex, depth: int) -> RankingCache:
    return RankingCache(lambda u: [i for i, _ in index.top_k(user_vector(model, u), depth)], depth)


class OrderDest2i:
    """Destination-city popularity baseline.

    Ranks pool items located in any of the itinerary's destination cities by
    click count on the training split, then fills from global popularity.
    Ties break by ascending item id.
    """

    def __init__(self, train_corpus: Iterable[TrainingInstance], pool: Sequence[Item]):
        counts = Counter(inst.target.item_id for inst in train_corpus if inst.target is not None and inst.label_click == 1)
        self.global_order = sorted((it.item_id for it in pool), key=lambda i: (-counts[i], i))
        self.city_order: dict[str, list[str]] = {}
        city_of = {it.item_id: it.dest_city_id for it in pool}
        for item_id in self.global_order:
            self.city_order.setdefault(city_of[item_id], []).append(item_id)
        self.counts = counts

    def rank(self, user: TrainingInstance, depth: int) -> list[str]:
        cities = {o.dest_city_id for o in user.itinerary}
        local = [i for c in cities for i in self.city_order.get(c, ())]
        local.sort(key=lambda i: (-self.counts[i], i))
        if len(local) >= depth:
            return local[:depth]
        chosen = set(local)
        out = list(local)
        for i in self.global_order:
            if len(out) >= depth:
                break
            if i not in chosen:
                out.append(i)
        return out

    def retriever(self, depth: int) -> RankingCache:
        return RankingCache(lambda u: self.rank(u, depth), depth)


def evaluate_retriever(
    method: str, retriever: Retriever, split: TestSplit, ks: Sequence[int] = K_GRID
) -> EvalReport:
    ks = sorted(set(ks))
    return EvalReport(
        method=method,
        hit_rate={k: hit_rate_at_k(split.cases, retriever, k) for k in ks},
        precision={k: precision_at_k(split.users, retriever, split.clicks, k) for k in ks},
        n_cases=len(split.cases),
        n_users=len(split.users),
    )


def evaluate_model(
    method: str,
    model: FitNet,
    pool: Sequence[Item],
    split: TestSplit,
    ks: Sequence[int] = K_GRID,
    threads: int = 1,
) -> EvalReport:
    depth = max(ks)
    if depth > len(pool):
        raise InvalidArgumentError(f"k={depth} exceeds pool size {len(pool)}")
    retriever = model_retriever(model, build_index(pool, model), depth)
    retriever.prefetch(split.users, threads)
    return evaluate_retriever(method, retriever, split, ks)


def run_comparison(
    train_corpus: Sequence[TrainingInstance],
    test_corpus: Sequence[TrainingInstance],
    pool: Sequence[Item],
    models: Mapping[str, FitNet | None],
    methods: Sequence[str] = METHODS,
    ks: Sequence[int] = K_GRID,
    threads: int | None = None,
) -> list[EvalReport]:
    """Evaluate every method on the same held-out split and k grid.

    ``models`` maps trainable method names to trained networks; the
    popularity baseline is fitted here from ``train_corpus``.
    """
    threads = threads or default_threads()
    split = build_test_split(test_corpus)
    if not split.cases:
        raise InvalidArgumentError("test corpus has no usable cases")
    reports = []
    for method in methods:
        if method == "orderdest2i":
            depth = max(ks)
            r = OrderDest2i(train_corpus, pool).retriever(depth)
            r.prefetch(split.users, threads)
            reports.append(evaluate_retriever(method, r, split, ks))
            continue
        model = models.get(method)
        if model is None:
            raise ConfigurationError(f"method {method!r} has no trained model")
        reports.append(evaluate_model(method, model, pool, split, ks, threads))
    return reports


def default_threads() -> int:
    env = os.environ.get("FITNET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"FITNET_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def format_table(reports: Sequence[EvalReport]) -> str:
    lines = ["method,k,hitrate,precision"]
    for rep in reports:
        for method, k, hr, pr in rep.rows():
            lines.append(f"{method},{k},{hr:.6f},{pr:.6f}")
    return "\n".join(lines) + "\n"


def format_summary(reports: Sequence[EvalReport]) -> str:
    if not reports:
        return ""
    ks = sorted(reports[0].hit_rate)
    width = max(len(r.method) for r in reports)
    head = " " * width + "  " + "  ".join(f"HR@{k:<4d}" for k in ks) + "  " + "  ".join(f"P@{k:<5d}" for k in ks)
    lines = [head]
    for r in reports:
        hr = "  ".join(f"{r.hit_rate[k]:.4f}" for k in ks)
        pr = "  ".join(f"{r.precision[k]:.4f}" for k in ks)
        lines.append(f"{r.method:<{width}}  {hr}  {pr}")
    lines.append(f"({reports[0].n_cases} test cases, {reports[0].n_users} users)")
    return "\n".join(lines) + "\n"
