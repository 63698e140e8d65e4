"""Supervised disentanglement scores: MIG, FactorScore, SAP and DCI disentanglement."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from .datasets import CATEGORICAL, FactorDataset

log = logging.getLogger(__name__)

CART_MAX_DEPTH = 8
CART_MIN_LEAF = 5
CART_TREES = 10


@dataclass(frozen=True)
class Protocol:
    mig_bins: int
    mig_samples: int | None        # None: the full dataset
    fs_train: int
    fs_test: int
    sap_train: int
    sap_test: int
    dci_train: int
    dci_test: int
    fs_batch: int = 64
    fs_global: int = 10000


WAVEFORM_PROTOCOL = Protocol(mig_bins=50, mig_samples=None, fs_train=1000, fs_test=200,
                             sap_train=240, sap_test=120, dci_train=240, dci_test=120)
DSPRITES_PROTOCOL = Protocol(mig_bins=20, mig_samples=10000, fs_train=5000, fs_test=1000,
                             sap_train=5000, sap_test=1000, dci_train=5000, dci_test=1000)
PROTOCOLS = {"waveforms": WAVEFORM_PROTOCOL, "dsprites": DSPRITES_PROTOCOL}


@dataclass
class MetricReport:
    mig: float
    factor_score: float
    sap: float
    dci: float
    diagnostics: dict = field(default_factory=dict)

    def scores(self) -> dict[str, float]:
        return {"mig": self.mig, "factor_score": self.factor_score, "sap": self.sap, "dci": self.dci}


# ---------------------------------------------------------------------------
# mutual information

def discretize(x: np.ndarray, bins: int | None) -> np.ndarray:
    """Integer bin codes: equal-width bins from min to max, or category codes if ``bins`` is None."""
    x = np.asarray(x)
    if bins is None:
        return np.unique(x, return_inverse=True)[1]
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi <= lo:
        return np.zeros(x.shape[0], dtype=np.int64)
    edges = np.linspace(lo, hi, bins + 1)
    return np.clip(np.digitize(x, edges[1:-1]), 0, bins - 1)


def discrete_entropy(codes: np.ndarray) -> float:
    p = np.bincount(codes) / codes.size
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def discrete_mi(ca: np.ndarray, cb: np.ndarray) -> float:
    """Plug-in mutual information (nats) of two integer-coded vectors."""
    nb = int(cb.max()) + 1
    joint = np.bincount(ca * nb + cb, minlength=(int(ca.max()) + 1) * nb).reshape(-1, nb)
    pab = joint / ca.size
    pa = pab.sum(axis=1, keepdims=True)
    pb = pab.sum(axis=0, keepdims=True)
    nz = pab > 0
    return float(max(np.sum(pab[nz] * np.log(pab[nz] / (pa @ pb)[nz])), 0.0))


def histogram_mi(a, b, bins_a: int | None, bins_b: int | None) -> float:
    """Histogram mutual information; ``None`` bins treat that input as categorical."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch {a.shape[0]} vs {b.shape[0]}")
    for bins in (bins_a, bins_b):
        if bins is not None and bins < 2:
            raise ValueError("continuous inputs need at least 2 bins")
    return discrete_mi(discretize(a, bins_a), discretize(b, bins_b))


def _factor_codes(factors: np.ndarray, kinds: Sequence[str], bins: int) -> list[np.ndarray]:
    return [discretize(factors[:, k], None if kinds[k] == CATEGORICAL else bins)
            for k in range(factors.shape[1])]


def _top_two(column: np.ndarray) -> tuple[int, int]:
    # stable sort on the negated scores breaks ties toward the lower latent index
    order = np.argsort(-column, kind="stable")
    return int(order[0]), int(order[1])


def mig(codes: np.ndarray, factors: np.ndarray, kinds: Sequence[str], bins: int = 20,
        diagnostics: dict | None = None) -> float:
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[1] < 2:
        raise ValueError("MIG needs at least two latents")
    zc = [discretize(codes[:, j], bins) for j in range(codes.shape[1])]
    vc = _factor_codes(factors, kinds, bins)
    mi = np.array([[discrete_mi(z, v) for v in vc] for z in zc])  # (m, K)
    gaps = []
    for k, v in enumerate(vc):
        h = discrete_entropy(v)
        if h <= 0:
            log.warning("factor %d is constant; excluded from MIG", k)
            continue
        a, b = _top_two(mi[:, k])
        gaps.append((mi[a, k] - mi[b, k]) / h)
    if diagnostics is not None:
        diagnostics["mi_matrix"] = mi
        diagnostics["mig_gaps"] = gaps
    return float(np.clip(np.mean(gaps), 0.0, 1.0)) if gaps else 0.0


# ---------------------------------------------------------------------------
# FactorScore

def factor_votes(codes_all: np.ndarray, dataset: FactorDataset, n_votes: int, batch: int,
                 global_var: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    active = global_var > 1e-12
    votes = np.empty((n_votes, 2), dtype=np.int64)
    for t in range(n_votes):
        k = int(rng.integers(dataset.n_factors))
        idx = dataset.sample_fixed_factor(k, batch, rng)
        var = np.var(codes_all[idx], axis=0, ddof=1)
        normed = np.where(active, var / np.where(active, global_var, 1.0), np.inf)
        votes[t] = (int(np.argmin(normed)), k)
    return votes


def factor_score(representation_fn: Callable[[np.ndarray], np.ndarray], dataset: FactorDataset,
                 n_train: int, n_test: int, rng: np.random.Generator, batch: int = 64,
                 n_global: int = 10000, diagnostics: dict | None = None) -> float:
    """Majority-vote accuracy of predicting the fixed factor from the least-varying latent."""
    codes_all = np.asarray(representation_fn(dataset.inputs), dtype=np.float64)
    sample = rng.choice(len(dataset), size=min(n_global, len(dataset)), replace=False)
    global_var = np.var(codes_all[sample], axis=0, ddof=1)
    dead = np.flatnonzero(global_var <= 1e-12)
    if dead.size:
        log.info("FactorScore: excluding dead latents %s", dead.tolist())
    if dead.size == codes_all.shape[1]:
        return 0.0
    train = factor_votes(codes_all, dataset, n_train, batch, global_var, rng)
    test = factor_votes(codes_all, dataset, n_test, batch, global_var, rng)
    counts = np.zeros((codes_all.shape[1], dataset.n_factors), dtype=np.int64)
    np.add.at(counts, (train[:, 0], train[:, 1]), 1)
    classifier = np.argmax(counts, axis=1)
    acc = float(np.mean(classifier[test[:, 0]] == test[:, 1]))
    if diagnostics is not None:
        diagnostics["fs_votes"] = counts
    return acc


# ---------------------------------------------------------------------------
# SAP

def _r2_score(z_tr, y_tr, z_te, y_te) -> float:
    if np.var(z_tr) <= 1e-12 or np.var(y_te) <= 1e-12:
        return 0.0
    slope, intercept = np.polyfit(z_tr, y_tr, 1)
    resid = y_te - (slope * z_te + intercept)
    return float(np.clip(1.0 - np.sum(resid**2) / np.sum((y_te - y_te.mean()) ** 2), 0.0, 1.0))


def best_interval(values: np.ndarray, positive: np.ndarray) -> tuple[float, float, bool]:
    """Interval rule on one variable maximizing TPR + TNR - 1 for ``positive``.

    Returns ``(lo, hi, inside)``: predict positive for ``lo <= v <= hi`` when
    ``inside``, else for values outside that range. Found in linear time as a
    maximum-sum run over the sorted distinct values.
    """
    uniq, inv = np.unique(values, return_inverse=True)
    n_pos = positive.sum()
    n_neg = positive.size - n_pos
    w = np.where(positive, 1.0 / n_pos, -1.0 / n_neg)
    per_value = np.bincount(inv, weights=w, minlength=uniq.size)
    best = (-np.inf, 0, 0, True)
    for sign in (1.0, -1.0):
        run, start = 0.0, 0
        for j, v in enumerate(sign * per_value):
            if run <= 0:
                run, start = v, j
            else:
                run += v
            if run > best[0] + 1e-15:
                best = (run, start, j, sign > 0)
    _, s, e, inside = best
    return float(uniq[s]), float(uniq[e]), inside


def _interval_j(z_tr, y_tr, z_te, y_te) -> float:
    """Mean over classes of held-out Youden's J of one-vs-rest interval rules."""
    scores = []
    for c in np.unique(y_tr):
        pos_tr = y_tr == c
        pos_te = y_te == c
        if pos_tr.all() or not pos_tr.any() or pos_te.all() or not pos_te.any():
            continue
        lo, hi, inside = best_interval(z_tr, pos_tr)
        pred = (z_te >= lo) & (z_te <= hi)
        if not inside:
            pred = ~pred
        tpr = pred[pos_te].mean()
        tnr = (~pred[~pos_te]).mean()
        scores.append(max(tpr + tnr - 1.0, 0.0))
    return float(np.mean(scores)) if scores else 0.0


def sap_matrix(codes: np.ndarray, factors: np.ndarray, kinds: Sequence[str],
               n_train: int, n_test: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    z_tr, z_te = codes[:n_train], codes[n_train:n_train + n_test]
    v_tr, v_te = factors[:n_train], factors[n_train:n_train + n_test]
    S = np.zeros((codes.shape[1], factors.shape[1]))
    for i in range(codes.shape[1]):
        if np.var(z_tr[:, i]) <= 1e-12:
            continue
        for k in range(factors.shape[1]):
            if kinds[k] == CATEGORICAL:
                S[i, k] = _interval_j(z_tr[:, i], v_tr[:, k], z_te[:, i], v_te[:, k])
            else:
                S[i, k] = _r2_score(z_tr[:, i], v_tr[:, k], z_te[:, i], v_te[:, k])
    return S


def sap(codes: np.ndarray, factors: np.ndarray, kinds: Sequence[str], n_train: int, n_test: int,
        diagnostics: dict | None = None) -> float:
    """Mean gap between the most and second-most predictive single latent per factor.

    Rows ``[0, n_train)`` train the single-latent predictors and the following
    ``n_test`` rows score them.
    """
    if codes.shape[1] < 2:
        raise ValueError("SAP needs at least two latents")
    S = sap_matrix(codes, factors, kinds, n_train, n_test)
    gaps = []
    for k in range(S.shape[1]):
        a, b = _top_two(S[:, k])
        gaps.append(S[a, k] - S[b, k])
    if diagnostics is not None:
        diagnostics["sap_matrix"] = S
    return float(np.clip(np.mean(gaps), 0.0, 1.0))


# ---------------------------------------------------------------------------
# DCI disentanglement

def dci_from_importance(R: np.ndarray) -> float:
    """Importance-weighted mean of ``1 - H_K(row)`` over rows of an m x K matrix."""
    R = np.abs(np.asarray(R, dtype=np.float64))
    K = R.shape[1]
    totals = R.sum(axis=1)
    if totals.sum() <= 0:
        return 0.0
    keep = totals > 0
    P = R[keep] / totals[keep, None]
    if K > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(P > 0, P * np.log(P), 0.0)
        row_h = -plogp.sum(axis=1) / np.log(K)
    else:
        row_h = np.zeros(P.shape[0])
    weights = totals[keep] / totals[keep].sum()
    return float(np.clip(np.sum(weights * (1.0 - row_h)), 0.0, 1.0))


def importance_matrix(codes: np.ndarray, factors: np.ndarray, n_train: int,
                      rng: np.random.Generator, n_trees: int = CART_TREES) -> np.ndarray:
    """Summed impurity decrease of each latent when predicting each (standardized) factor.

    Importances are averaged over ``n_trees`` CART regressors fit on bootstrap
    resamples; a single tree's importances are too noisy on small samples for
    unrelated codes to score near zero.
    """
    z = np.asarray(codes[:n_train], dtype=np.float64)
    n = z.shape[0]
    R = np.zeros((z.shape[1], factors.shape[1]))
    for k in range(factors.shape[1]):
        y = factors[:n_train, k].astype(np.float64)
        sd = y.std()
        if sd <= 0:
            continue
        y = (y - y.mean()) / sd
        for _ in range(n_trees):
            idx = rng.integers(0, n, n) if n_trees > 1 else np.arange(n)
            tree = DecisionTreeRegressor(max_depth=CART_MAX_DEPTH, min_samples_leaf=CART_MIN_LEAF,
                                         random_state=int(rng.integers(2**31 - 1)))
            tree.fit(z[idx], y[idx])
            R[:, k] += tree.tree_.compute_feature_importances(normalize=False) / n_trees
    return R


def dci_disentanglement(codes: np.ndarray, factors: np.ndarray, n_train: int, n_test: int,
                        rng: np.random.Generator) -> tuple[float, np.ndarray]:
    R = importance_matrix(codes, factors, n_train, rng)
    return dci_from_importance(R), R


# ---------------------------------------------------------------------------

def evaluate_codes(codes_fn: Callable[[np.ndarray], np.ndarray], dataset: FactorDataset,
                   protocol: Protocol, rng: np.random.Generator) -> MetricReport:
    """Run all four metrics with ``codes_fn`` mapping inputs to representations."""
    diag: dict = {}
    N = len(dataset)
    codes_all = np.asarray(codes_fn(dataset.inputs), dtype=np.float64)
    cached = lambda x: codes_all if x is dataset.inputs else codes_fn(x)  # noqa: E731

    if protocol.mig_samples is None or protocol.mig_samples >= N:
        mig_idx = np.arange(N)
    else:
        mig_idx = rng.choice(N, size=protocol.mig_samples, replace=False)
    mig_score = mig(codes_all[mig_idx], dataset.factors[mig_idx], dataset.kinds,
                    protocol.mig_bins, diag)

    fs = factor_score(cached, dataset, protocol.fs_train, protocol.fs_test, rng,
                      batch=protocol.fs_batch, n_global=protocol.fs_global, diagnostics=diag)

    def split(n_tr, n_te):
        idx = rng.permutation(N)
        if n_tr + n_te > N:
            idx = rng.choice(N, size=n_tr + n_te, replace=True)
        return idx[:n_tr + n_te]

    idx = split(protocol.sap_train, protocol.sap_test)
    sap_score = sap(codes_all[idx], dataset.factors[idx], dataset.kinds,
                    protocol.sap_train, protocol.sap_test, diag)
    idx = split(protocol.dci_train, protocol.dci_test)
    dci_score, R = dci_disentanglement(codes_all[idx], dataset.factors[idx],
                                       protocol.dci_train, protocol.dci_test, rng)
    diag["importance"] = R
    return MetricReport(mig_score, fs, sap_score, dci_score, diag)


def evaluate_all(model, dataset: FactorDataset, protocol: Protocol,
                 rng: np.random.Generator) -> MetricReport:
    """All four metrics on the model's noiseless codes."""
    return evaluate_codes(model.representation, dataset, protocol, rng)
