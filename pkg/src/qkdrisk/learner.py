"""Category-based GMM learning gated by the two-sample KS P-value.

``algorithm1_fit`` is the exhaustive-trial fitter; ``algorithm2_train`` forms
categories over training folds; ``algorithm3_test`` assigns test folds to the
trained categories and refines each category with a larger trial budget.
``cross_validate`` runs train/test over k rotating folds.

Seeds: every random draw is keyed below the caller's master seed by a spawn
path, so results do not depend on evaluation order:

    training fold s            -> (seed, 2, s)
    training membership of s   -> (seed, 6, s)
    test fold s vs category h  -> (seed, 3, s, h)
    test membership s vs h     -> (seed, 7, s, h)
    refit of category h        -> (seed, 4, h)
    cross-validation fold i    -> (seed, 5, i)
    inside algorithm1_fit, trial m for c clusters: (.., c, m, 0) seeds the EM
    start and (.., c, m, 1) the synthetic KS sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .data import FoldSet, QberSeries, partition_folds
from .errors import ConfigError, DataError
from .gmm import GmmModel, aic, em_fit, gmm_sample
from .ks import ks_pvalue_asymptotic, ks_statistic_sorted
from .seeding import derive_seed, rng_for

DEFAULT_VARSIGMA = 0.95
DEFAULT_C_RANGE = (2, 15)
DEFAULT_T_TRAINING = 100
DEFAULT_T_TEST = 10000
DEFAULT_I_MAX = 100


@dataclass
class FitRecord:
    c: int
    model: GmmModel
    p_value: float
    trials_used: int
    d_statistic: float = float("nan")
    aic: float = float("nan")
    best_trial: int = 0

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "model": self.model.to_dict(),
            "p_value": self.p_value,
            "d_statistic": self.d_statistic,
            "aic": self.aic,
            "trials_used": self.trials_used,
            "best_trial": self.best_trial,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitRecord":
        return cls(
            c=int(d["c"]),
            model=GmmModel.from_dict(d["model"]),
            p_value=float(d["p_value"]),
            trials_used=int(d["trials_used"]),
            d_statistic=float(d.get("d_statistic", "nan")),
            aic=float(d.get("aic", "nan")),
            best_trial=int(d.get("best_trial", 0)),
        )


def best_record(fits: Sequence[FitRecord]) -> FitRecord:
    """Highest P-value; ties go to the smaller c."""
    if not fits:
        raise DataError("no fits to choose from")
    return min(fits, key=lambda r: (-r.p_value, r.c))


def _num(v: float):
    # JSON has no NaN; the first fold of a category has no membership test
    return None if v != v else v


def _unnum(v) -> float:
    return float("nan") if v is None else float(v)


@dataclass
class Category:
    id: int
    member_folds: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    fold_fits: dict = field(default_factory=dict)
    n_samples: int = 0
    # fold -> membership P-value against the category (NaN for its first fold)
    membership_p: dict = field(default_factory=dict)
    # filled by the test phase
    test_folds: list = field(default_factory=list)
    test_fold_fits: dict = field(default_factory=dict)
    fallback_folds: list = field(default_factory=list)
    n_test_samples: int = 0
    test_membership_p: dict = field(default_factory=dict)

    @property
    def best(self) -> FitRecord:
        if not self.fits:
            raise DataError(f"category {self.id} has no fits")
        return best_record(self.fits)

    @property
    def best_c(self) -> int:
        return self.best.c

    def init_models(self) -> dict:
        return {r.c: r.model for r in self.fits}

    def reference_models(self) -> list:
        """Every model fitted to a training member fold, in fold then c order."""
        return [r.model for s in self.member_folds for r in self.fold_fits.get(s, [])]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "member_folds": list(self.member_folds),
            "n_samples": self.n_samples,
            "best_c": self.best_c if self.fits else None,
            "fits": [r.to_dict() for r in self.fits],
            "fold_fits": {str(k): [r.to_dict() for r in v] for k, v in sorted(self.fold_fits.items())},
            "test_folds": list(self.test_folds),
            "fallback_folds": list(self.fallback_folds),
            "n_test_samples": self.n_test_samples,
            "membership_p": {str(k): _num(v) for k, v in sorted(self.membership_p.items())},
            "test_membership_p": {str(k): _num(v) for k, v in sorted(self.test_membership_p.items())},
            "test_fold_fits": {str(k): [r.to_dict() for r in v] for k, v in sorted(self.test_fold_fits.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Category":
        return cls(
            id=int(d["id"]),
            member_folds=[int(x) for x in d["member_folds"]],
            fits=[FitRecord.from_dict(r) for r in d["fits"]],
            fold_fits={int(k): [FitRecord.from_dict(r) for r in v] for k, v in d.get("fold_fits", {}).items()},
            n_samples=int(d.get("n_samples", 0)),
            test_folds=[int(x) for x in d.get("test_folds", [])],
            test_fold_fits={int(k): [FitRecord.from_dict(r) for r in v] for k, v in d.get("test_fold_fits", {}).items()},
            fallback_folds=[int(x) for x in d.get("fallback_folds", [])],
            n_test_samples=int(d.get("n_test_samples", 0)),
            membership_p={int(k): _unnum(v) for k, v in d.get("membership_p", {}).items()},
            test_membership_p={int(k): _unnum(v) for k, v in d.get("test_membership_p", {}).items()},
        )


@dataclass
class CategorySet:
    categories: list
    varsigma: float
    c_range: tuple
    t_training: int
    t_test: int
    i_max: int = DEFAULT_I_MAX
    phase: str = "train"
    fold_assignment: list = field(default_factory=list)

    @property
    def H(self) -> int:
        return len(self.categories)

    def category_of_fold(self, s: int) -> Category:
        return self.categories[self.fold_assignment[s]]

    def category_weights(self) -> np.ndarray:
        """N_i / N for each category, counted over the phase's own samples."""
        counts = np.array(
            [c.n_test_samples if self.phase == "test" else c.n_samples for c in self.categories], dtype=float
        )
        total = counts.sum()
        if total <= 0:
            raise DataError("category set holds no samples")
        return counts / total

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "varsigma": self.varsigma,
            "c_range": list(self.c_range),
            "t_training": self.t_training,
            "t_test": self.t_test,
            "i_max": self.i_max,
            "fold_assignment": list(self.fold_assignment),
            "categories": [c.to_dict() for c in self.categories],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CategorySet":
        return cls(
            categories=[Category.from_dict(c) for c in d["categories"]],
            varsigma=float(d["varsigma"]),
            c_range=tuple(int(x) for x in d["c_range"]),
            t_training=int(d["t_training"]),
            t_test=int(d["t_test"]),
            i_max=int(d.get("i_max", DEFAULT_I_MAX)),
            phase=d.get("phase", "train"),
            fold_assignment=[int(x) for x in d.get("fold_assignment", [])],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CategorySet":
        return cls.from_dict(json.loads(text))


def _check_c_range(c_range) -> tuple:
    lo, hi = (int(c_range[0]), int(c_range[1]))
    if lo < 1 or hi < lo:
        raise ConfigError(f"invalid cluster range {c_range!r}")
    return lo, hi


def algorithm1_fit(
    data,
    c_range=DEFAULT_C_RANGE,
    t_max: int = DEFAULT_T_TRAINING,
    i_max: int = DEFAULT_I_MAX,
    init: Optional[Mapping[int, GmmModel]] = None,
    seed: int = 0,
) -> list[FitRecord]:
    """Best-of-``t_max`` EM fits per cluster count, scored by KS P-value.

    Each trial compares the data with an equally sized sample drawn from the
    trial's fitted mixture. Cold trials start EM from their own k-means++
    draw. With ``init`` the EM start is the given model, which makes the EM
    result identical across trials; it is fitted once and trials differ only
    in the synthetic comparison sample.
    """
    x = np.asarray(data, dtype=float).ravel()
    lo, hi = _check_c_range(c_range)
    if t_max < 1:
        raise ConfigError("t_max must be at least 1")
    if x.size < hi:
        raise ConfigError(f"fold of {x.size} points is shorter than c_max={hi}")
    n = x.size
    x_sorted = np.sort(x)
    records = []
    for c in range(lo, hi + 1):
        warm = init.get(c) if init else None
        if warm is not None:
            warm_model, _ = em_fit(x, c, warm, i_max)
        best = None
        for m in range(t_max):
            if warm is not None:
                model = warm_model
            else:
                model, _ = em_fit(x, c, rng_for(seed, c, m, 0), i_max)
            synth = np.sort(gmm_sample(model, n, rng_for(seed, c, m, 1)))
            d = ks_statistic_sorted(x_sorted, synth)
            p = ks_pvalue_asymptotic(d, n, n)
            if best is None or p > best[0]:
                best = (p, d, model, m)
        p, d, model, m = best
        records.append(FitRecord(c, model, p, t_max, d, aic(model, x), m))
    return records


def membership_pvalue(data, models: Sequence[GmmModel], t_max: int, seed: int = 0) -> float:
    """How well an existing category explains ``data``, without refitting.

    Best KS P-value of ``data`` against ``t_max`` synthetic samples from each
    reference model. Trial m of model j draws from (seed, j, m).
    """
    x_sorted = np.sort(np.asarray(data, dtype=float).ravel())
    n = x_sorted.size
    best = 0.0
    for j, model in enumerate(models):
        for m in range(t_max):
            synth = np.sort(gmm_sample(model, n, rng_for(seed, j, m)))
            best = max(best, ks_pvalue_asymptotic(ks_statistic_sorted(x_sorted, synth), n, n))
    return best


def _fold_arrays(data, folds: Union[FoldSet, Sequence]) -> list[np.ndarray]:
    values = data.qber if isinstance(data, QberSeries) else np.asarray(data, dtype=float)
    if isinstance(folds, FoldSet):
        return [values[np.asarray(f)] for f in folds.folds]
    return [np.asarray(f, dtype=float) for f in folds]


def algorithm2_train(
    data,
    folds: Union[FoldSet, Sequence],
    varsigma: float = DEFAULT_VARSIGMA,
    c_range=DEFAULT_C_RANGE,
    t_training: int = DEFAULT_T_TRAINING,
    i_max: int = DEFAULT_I_MAX,
    seed: int = 0,
    t_test: int = DEFAULT_T_TEST,
) -> CategorySet:
    """Training phase: sequential category formation over folds.

    The first fold seeds category 1. Every fold is fitted by
    :func:`algorithm1_fit`. A later fold joins the current category when the
    category's models explain it (:func:`membership_pvalue` above
    ``varsigma``); otherwise it opens a new category, which becomes current.
    Earlier categories are not revisited. A category's fits are the output for
    its most recent member fold.

    ``data`` is a QberSeries or array and ``folds`` a FoldSet over it, or
    ``data`` is ignored (pass ``None``) and ``folds`` is a list of arrays.
    """
    arrays = _fold_arrays(data, folds)
    if len(arrays) < 2:
        raise ConfigError("training needs at least 2 folds")
    if not 0.0 < varsigma < 1.0:
        raise ConfigError("varsigma must lie in (0, 1)")
    c_range = _check_c_range(c_range)

    categories: list[Category] = []
    assignment = []
    for s, x in enumerate(arrays):
        fits = algorithm1_fit(x, c_range, t_training, i_max, None, derive_seed(seed, 2, s))
        p_member = float("nan")
        if s == 0:
            joins = False
        else:
            refs = categories[-1].reference_models()
            p_member = membership_pvalue(x, refs, t_training, derive_seed(seed, 6, s))
            joins = p_member > varsigma
        if not joins:
            categories.append(Category(id=len(categories)))
        cat = categories[-1]
        cat.member_folds.append(s)
        cat.fold_fits[s] = fits
        cat.membership_p[s] = p_member
        cat.fits = fits
        cat.n_samples += x.size
        assignment.append(cat.id)
    return CategorySet(categories, varsigma, c_range, t_training, t_test, i_max, "train", assignment)


def algorithm3_test(
    data,
    folds: Union[FoldSet, Sequence],
    trained: CategorySet,
    varsigma: Optional[float] = None,
    t_test: Optional[int] = None,
    i_max: Optional[int] = None,
    seed: int = 0,
) -> CategorySet:
    """Testing phase: assign folds to existing categories, then refine.

    Each fold joins the first category h = 1..H whose models explain it
    (:func:`membership_pvalue` above ``varsigma``, training trial budget), or
    the last category if none does. The fold is then fitted warm-started from
    that category's models, which become the category's new start. After all folds
    are placed, every category that received folds is refitted on their
    concatenation with ``t_test`` trials. No categories are created.
    """
    if trained is None or trained.H == 0:
        raise DataError("trained category set is empty")
    varsigma = trained.varsigma if varsigma is None else varsigma
    t_test = trained.t_test if t_test is None else t_test
    i_max = trained.i_max if i_max is None else i_max
    arrays = _fold_arrays(data, folds)

    cats = [
        Category(
            id=c.id,
            member_folds=list(c.member_folds),
            fits=list(c.fits),
            fold_fits=dict(c.fold_fits),
            n_samples=c.n_samples,
            membership_p=dict(c.membership_p),
        )
        for c in trained.categories
    ]
    inits = [c.init_models() for c in cats]
    refs = [c.reference_models() for c in cats]
    assignment = []
    for s, x in enumerate(arrays):
        matched = False
        for h in range(len(cats)):
            p_member = membership_pvalue(x, refs[h], trained.t_training, derive_seed(seed, 7, s, h))
            if p_member > varsigma:
                matched = True
                break
        cat = cats[h]
        cat.test_membership_p[s] = p_member
        fits = algorithm1_fit(x, trained.c_range, trained.t_training, i_max, inits[h], derive_seed(seed, 3, s, h))
        cat.test_folds.append(s)
        cat.test_fold_fits[s] = fits
        cat.n_test_samples += x.size
        if not matched:
            cat.fallback_folds.append(s)
        inits[h] = {r.c: r.model for r in fits}
        assignment.append(h)

    for h, cat in enumerate(cats):
        if not cat.test_folds:
            continue
        pooled = np.concatenate([arrays[s] for s in cat.test_folds])
        cat.fits = algorithm1_fit(pooled, trained.c_range, t_test, i_max, inits[h], derive_seed(seed, 4, h))
    return CategorySet(cats, varsigma, trained.c_range, trained.t_training, t_test, i_max, "test", assignment)


@dataclass
class FoldReport:
    fold: int
    train: CategorySet
    test: CategorySet
    rows: list  # (category id, c, p_value, aic) for refitted categories

    @property
    def best_p_value(self) -> float:
        return max(r[2] for r in self.rows)

    def p_values(self) -> dict:
        """c -> best P-value across refitted categories."""
        out: dict = {}
        for _, c, p, _ in self.rows:
            out[c] = max(p, out.get(c, -1.0))
        return out

    def aic_values(self) -> dict:
        out: dict = {}
        for cid, c, _, a in self.rows:
            out.setdefault(c, a)
        return out

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "train_categories": self.train.H,
            "best_p_value": self.best_p_value,
            "rows": [{"category": cid, "c": c, "p_value": p, "aic": a} for cid, c, p, a in self.rows],
            "test": self.test.to_dict(),
        }


def cross_validate(
    data,
    k: int = 4,
    varsigma: float = DEFAULT_VARSIGMA,
    c_range=DEFAULT_C_RANGE,
    t_training: int = DEFAULT_T_TRAINING,
    t_test: int = DEFAULT_T_TEST,
    i_max: int = DEFAULT_I_MAX,
    train_subfolds: Optional[int] = None,
    test_subfolds: int = 1,
    mode: str = "contiguous",
    seed: int = 0,
) -> list[FoldReport]:
    """k-fold rotation: train on k-1 folds, test on the held-out one.

    The training remainder is re-partitioned into ``train_subfolds`` folds
    (default k-1) and the held-out fold into ``test_subfolds`` windows.
    """
    values = data.qber if isinstance(data, QberSeries) else np.asarray(data, dtype=float)
    if k < 2:
        raise ConfigError("cross-validation needs k >= 2")
    outer = partition_folds(values.size, k, mode)
    train_subfolds = k - 1 if train_subfolds is None else train_subfolds
    reports = []
    for i in range(k):
        fold_seed = derive_seed(seed, 5, i)
        train_idx = np.concatenate([np.asarray(outer.folds[j]) for j in range(k) if j != i])
        train_x = values[train_idx]
        test_x = values[np.asarray(outer.folds[i])]
        trained = algorithm2_train(
            train_x,
            partition_folds(train_x.size, train_subfolds),
            varsigma,
            c_range,
            t_training,
            i_max,
            fold_seed,
            t_test,
        )
        if test_subfolds > 1:
            test_folds = partition_folds(test_x.size, test_subfolds)
        else:
            test_folds = [test_x]
        tested = algorithm3_test(test_x, test_folds, trained, varsigma, t_test, i_max, fold_seed)
        rows = [
            (cat.id, r.c, r.p_value, r.aic)
            for cat in tested.categories
            if cat.test_folds
            for r in cat.fits
        ]
        reports.append(FoldReport(i, trained, tested, rows))
    return reports
