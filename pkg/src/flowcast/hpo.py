"""Hyperparameter study engine: TPE sampling with Successive Halving pruning.

Trials report their validation compound score at geometrically spaced
rung epochs; at each rung only the top 1/eta of the scores seen so far
survive (never before bootstrap_count scores exist). The sampler draws
uniformly for the startup trials, then splits finished trials into good
and bad sets, fits per-parameter Parzen estimators, and returns the
candidate with the best good/bad density ratio. An append-only CSV
journal records every event and supports resuming a study.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySpaceError
from .rng import seeded_rng


@dataclass(frozen=True)
class RealParam:
    name: str
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"{self.name}: bounds must be ordered")
        if self.log and self.low <= 0:
            raise ValueError(f"{self.name}: log scale needs positive bounds")


@dataclass(frozen=True)
class IntParam:
    name: str
    low: int
    high: int

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError(f"{self.name}: bounds must be ordered")


@dataclass(frozen=True)
class CatParam:
    name: str
    choices: tuple

    def __post_init__(self):
        if not self.choices:
            raise ValueError(f"{self.name}: choices must be nonempty")


ParamSpec = RealParam | IntParam | CatParam


class SearchSpace:
    def __init__(self, specs: list[ParamSpec]):
        if not specs:
            raise EmptySpaceError("search space has no parameters")
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.specs = list(specs)

    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def uniform_sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for spec in self.specs:
            if isinstance(spec, RealParam):
                if spec.log:
                    out[spec.name] = float(10 ** rng.uniform(math.log10(spec.low), math.log10(spec.high)))
                else:
                    out[spec.name] = float(rng.uniform(spec.low, spec.high))
            elif isinstance(spec, IntParam):
                out[spec.name] = int(rng.integers(spec.low, spec.high + 1))
            else:
                out[spec.name] = spec.choices[int(rng.integers(0, len(spec.choices)))]
        return out


@dataclass(frozen=True)
class ShaConfig:
    min_resource: int = 8
    reduction_factor: int = 3
    min_early_stopping_rate: int = 0
    bootstrap_count: int = 2

    def __post_init__(self):
        if self.reduction_factor < 2:
            raise ValueError("reduction factor must be >= 2")
        if self.min_resource < 1:
            raise ValueError("minimum resource must be >= 1")


@dataclass(frozen=True)
class TpeConfig:
    seed: int = 42
    n_startup: int = 10
    n_ei_candidates: int = 24
    multivariate: bool = True
    group: bool = True

    def __post_init__(self):
        if self.n_startup < 1 or self.n_ei_candidates < 1:
            raise ValueError("startup and candidate counts must be >= 1")


STATUS_RUNNING = "running"
STATUS_PRUNED = "pruned"
STATUS_COMPLETE = "complete"
STATUS_FAILED = "failed"


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    rung_scores: dict[int, float] = field(default_factory=dict)
    status: str = STATUS_RUNNING
    final_score: float | None = None


def sha_rungs(cfg: ShaConfig, max_epochs: int) -> list[int]:
    """Rung epochs min_resource * eta^k while they fit in the budget."""
    if max_epochs < cfg.min_resource:
        raise ValueError(f"max_epochs {max_epochs} below minimum resource {cfg.min_resource}")
    rungs = []
    epoch = cfg.min_resource
    while epoch <= max_epochs:
        rungs.append(epoch)
        epoch *= cfg.reduction_factor
    return rungs


def sha_should_prune(trial_id: int, rung_epoch: int, rung_scores: dict[int, float], cfg: ShaConfig) -> bool:
    """Prune when enough scores exist at the rung and the trial falls
    strictly below the top-1/eta score threshold (ceil(m/eta) survivors,
    boundary ties survive)."""
    if trial_id not in rung_scores:
        raise KeyError(f"trial {trial_id} has no score at rung {rung_epoch}")
    m = len(rung_scores)
    if m < cfg.bootstrap_count:
        return False
    keep = math.ceil(m / cfg.reduction_factor)
    threshold = sorted(rung_scores.values(), reverse=True)[keep - 1]
    return rung_scores[trial_id] < threshold


def _gauss_pdf(x: float, mu: np.ndarray, bw: float) -> float:
    z = (x - mu) / bw
    return float(np.mean(np.exp(-0.5 * z * z) / (bw * math.sqrt(2 * math.pi))))


class _ParzenSet:
    """Per-parameter density estimators for one set of observations."""

    def __init__(self, spec: ParamSpec, values: list):
        self.spec = spec
        if isinstance(spec, CatParam):
            counts = np.ones(len(spec.choices))  # add-one smoothing
            for v in values:
                counts[spec.choices.index(v)] += 1
            self.probs = counts / counts.sum()
        else:
            lo, hi = self._domain()
            if values:
                self.obs = np.array([self._to_domain(v) for v in values])
            else:
                self.obs = np.array([(lo + hi) / 2.0])  # degenerate set: flat-ish prior
            span = hi - lo
            self.bw = max(span / max(len(values), 1), 0.01 * span)

    def _domain(self) -> tuple[float, float]:
        spec = self.spec
        if isinstance(spec, RealParam) and spec.log:
            return math.log10(spec.low), math.log10(spec.high)
        return float(spec.low), float(spec.high)

    def _to_domain(self, v) -> float:
        if isinstance(self.spec, RealParam) and self.spec.log:
            return math.log10(v)
        return float(v)

    def _from_domain(self, x: float):
        spec = self.spec
        if isinstance(spec, IntParam):
            return int(np.clip(round(x), spec.low, spec.high))
        if spec.log:
            return float(10 ** np.clip(x, *map(math.log10, (spec.low, spec.high))))
        return float(np.clip(x, spec.low, spec.high))

    def sample(self, rng: np.random.Generator):
        if isinstance(self.spec, CatParam):
            return self.spec.choices[int(rng.choice(len(self.spec.choices), p=self.probs))]
        mu = self.obs[int(rng.integers(0, len(self.obs)))]
        return self._from_domain(float(rng.normal(mu, self.bw)))

    def log_density(self, value) -> float:
        if isinstance(self.spec, CatParam):
            return math.log(self.probs[self.spec.choices.index(value)])
        return math.log(max(_gauss_pdf(self._to_domain(value), self.obs, self.bw), 1e-300))


def _good_set_size(n: int) -> int:
    return min(math.ceil(0.25 * n), 25)


def tpe_suggest(
    history: list[TrialRecord],
    space: SearchSpace,
    cfg: TpeConfig,
    rng: np.random.Generator,
) -> dict:
    """Suggest a parameter assignment.

    Uniform until n_startup trials have completed; afterwards draw
    candidates from the good-set estimator and return the one with the
    highest good/bad density ratio (summed log ratio over parameters, so
    the winning candidate supplies the whole assignment at once).
    """
    completed = [t for t in history if t.status == STATUS_COMPLETE and t.final_score is not None]
    if len(completed) < cfg.n_startup:
        return space.uniform_sample(rng)

    ranked = sorted(completed, key=lambda t: (-t.final_score, t.trial_id))
    n_good = _good_set_size(len(ranked))
    good, bad = ranked[:n_good], ranked[n_good:]

    estimators = {}
    for spec in space.specs:
        l = _ParzenSet(spec, [t.params[spec.name] for t in good])
        g = _ParzenSet(spec, [t.params[spec.name] for t in bad])
        estimators[spec.name] = (l, g)

    best_candidate = None
    best_ratio = -math.inf
    for _ in range(cfg.n_ei_candidates):
        candidate = {name: l.sample(rng) for name, (l, g) in estimators.items()}
        ratio = sum(l.log_density(candidate[name]) - g.log_density(candidate[name])
                    for name, (l, g) in estimators.items())
        if ratio > best_ratio:
            best_ratio = ratio
            best_candidate = candidate
    return best_candidate


class StudyJournal:
    """Append-only CSV of trial events."""

    def __init__(self, path, space: SearchSpace):
        self.path = Path(path)
        self.space = space
        self.fields = ["event", "trial_id", "rung_epoch", "score", "status"] + space.names()
        if not self.path.exists():
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.fields)

    def append(self, event: str, trial: TrialRecord, rung_epoch=None, score=None):
        row = [event, trial.trial_id, "" if rung_epoch is None else rung_epoch,
               "" if score is None else repr(float(score)), trial.status]
        row += [repr(trial.params[n]) if not isinstance(trial.params[n], str) else trial.params[n]
                for n in self.space.names()]
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(row)

    def load(self) -> list[TrialRecord]:
        trials: dict[int, TrialRecord] = {}
        with open(self.path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                tid = int(row["trial_id"])
                if tid not in trials:
                    params = {}
                    for spec in self.space.specs:
                        raw = row[spec.name]
                        if isinstance(spec, CatParam) and any(isinstance(c, str) for c in spec.choices):
                            params[spec.name] = raw
                        elif isinstance(spec, (IntParam,)) or (
                            isinstance(spec, CatParam) and all(isinstance(c, int) for c in spec.choices)
                        ):
                            params[spec.name] = int(float(raw))
                        else:
                            params[spec.name] = float(raw)
                    trials[tid] = TrialRecord(tid, params)
                t = trials[tid]
                if row["event"] == "rung":
                    t.rung_scores[int(row["rung_epoch"])] = float(row["score"])
                    t.status = row["status"]
                else:
                    t.status = row["status"]
                    if row["status"] == STATUS_COMPLETE and row["score"]:
                        t.final_score = float(row["score"])
        return [trials[k] for k in sorted(trials)]


@dataclass
class StudyResult:
    best: TrialRecord | None
    history: list[TrialRecord]


def run_study(
    objective,
    space: SearchSpace,
    n_trials: int,
    sha: ShaConfig | None = None,
    tpe: TpeConfig | None = None,
    max_epochs: int = 75,
    journal_path=None,
    parallel: int = 1,
) -> StudyResult:
    """Run a maximization study.

    objective(params, max_epochs, report) trains one configuration and
    returns its final score; it should call report(epoch, score) as it
    goes and stop early when report returns False. Failing objectives
    mark their trial failed and the study continues. With parallel=1 the
    study is fully deterministic in the sampler seed.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    tpe = tpe or TpeConfig()
    history: list[TrialRecord] = []
    journal = StudyJournal(journal_path, space) if journal_path else None
    if journal is not None and journal.path.exists():
        history = journal.load()
    start_id = max((t.trial_id for t in history), default=-1) + 1
    rungs = set(sha_rungs(sha, max_epochs)) if sha else set()
    boards: dict[int, dict[int, float]] = {r: {} for r in rungs}
    for t in history:
        for epoch, score in t.rung_scores.items():
            if epoch in boards:
                boards[epoch][t.trial_id] = score
    lock = threading.Lock()

    def run_one(trial: TrialRecord):
        pruned = threading.Event()

        def report(epoch: int, score: float) -> bool:
            if epoch not in rungs:
                return True
            with lock:
                trial.rung_scores[epoch] = float(score)
                boards[epoch][trial.trial_id] = float(score)
                should_prune = sha_should_prune(trial.trial_id, epoch, dict(boards[epoch]), sha)
                if should_prune:
                    trial.status = STATUS_PRUNED
                    pruned.set()
                if journal:
                    journal.append("rung", trial, epoch, score)
            return not should_prune

        try:
            final = objective(trial.params, max_epochs, report)
        except Exception:
            with lock:
                trial.status = STATUS_FAILED
                if journal:
                    journal.append("final", trial)
            return
        with lock:
            if not pruned.is_set():
                trial.status = STATUS_COMPLETE
                trial.final_score = float(final)
            if journal:
                journal.append("final", trial, score=trial.final_score)

    todo = list(range(start_id, n_trials))
    if parallel <= 1:
        for tid in todo:
            with lock:
                params = tpe_suggest(history, space, tpe, seeded_rng(tpe.seed, 7000 + tid))
                trial = TrialRecord(tid, params)
                history.append(trial)
            run_one(trial)
    else:
        from concurrent.futures import ThreadPoolExecutor

        def suggest_and_run(tid: int):
            with lock:
                params = tpe_suggest(history, space, tpe, seeded_rng(tpe.seed, 7000 + tid))
                trial = TrialRecord(tid, params)
                history.append(trial)
            run_one(trial)

        with ThreadPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(suggest_and_run, todo))

    completed = [t for t in history if t.status == STATUS_COMPLETE and t.final_score is not None]
    best = max(completed, key=lambda t: (t.final_score, -t.trial_id), default=None)
    return StudyResult(best, history)


def default_search_space(kind: str) -> SearchSpace:
    common = [
        RealParam("learning_rate", 1e-4, 1e-2, log=True),
        RealParam("alpha", 0.1, 0.9),
        RealParam("mask_ratio", 0.1, 0.7),
        RealParam("dropout_p", 0.0, 0.5),
        CatParam("hidden_dim", (32, 64, 128)),
    ]
    if kind == "gnn":
        return SearchSpace(common + [
            CatParam("latent_dim", (16, 32, 64)),
            IntParam("n_layers", 1, 3),
            RealParam("edge_drop_p", 0.0, 0.5),
        ])
    return SearchSpace(common)
