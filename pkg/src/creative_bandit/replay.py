"""Offline policy evaluation.

Rejection replay over uniformly-logged impressions: per product, walk the log
in recorded order, ask the policy to choose among the product's candidates,
and only when the choice matches the logged creative does the impression
count, the click count, and the policy update. The resulting simulated CTR is
an unbiased estimate of the policy's online CTR when logging was uniform.

Also hosts the mushroom benchmark runner used to sanity-check policies on a
standard contextual task with asymmetric rewards.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .core import rng_stream
from .exceptions import EmptyDataset, MissingFeature
from .bandit import Policy

EAT, PASS = "eat", "pass"
REWARD_SAFE_EAT = 5.0
REWARD_POISON_EAT_GOOD = 5.0
REWARD_POISON_EAT_BAD = -35.0
POISON_GOOD_PROB = 0.5
# Expected reward of eating a poisonous mushroom: 0.5*5 + 0.5*(-35).
EXPECTED_POISON_EAT = POISON_GOOD_PROB * REWARD_POISON_EAT_GOOD + (
    1 - POISON_GOOD_PROB
) * REWARD_POISON_EAT_BAD


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Replay outcome: matched counts, simulated CTR, regret and curves.

    ``sctr`` and ``regret`` are None when no impression matched (flagged by
    ``no_matches`` rather than emitting NaN). ``daily`` rows are
    (day, daily_sctr, cumulative_sctr, matched_count) in day order;
    ``display_shares`` rows are (product_id, day, creative_id, share) where
    share is the creative's fraction of that product's matched displays that
    day.
    """

    matched_impressions: int
    matched_clicks: int
    sctr: float | None
    oracle_ctr: float
    regret: float | None
    daily: list = field(default_factory=list)
    display_shares: list = field(default_factory=list)
    products_total: int = 0
    products_without_matches: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def no_matches(self) -> bool:
        return self.matched_impressions == 0

    def to_dict(self) -> dict:
        return {
            "matched_impressions": self.matched_impressions,
            "matched_clicks": self.matched_clicks,
            "sctr": self.sctr,
            "oracle_ctr": self.oracle_ctr,
            "regret": self.regret,
            "no_matches": self.no_matches,
            "products_total": self.products_total,
            "products_without_matches": self.products_without_matches,
            "daily": [list(row) for row in self.daily],
            "display_shares": [list(row) for row in self.display_shares],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def write_report(report: EvalReport, directory):
    """Write report.json plus curves.csv and shares.csv into a directory."""
    import pathlib

    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    with open(directory / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["day", "daily_sctr", "cumulative_sctr", "matched"])
        for day, daily, cumulative, matched in report.daily:
            writer.writerow([day, repr(daily), repr(cumulative), matched])
    with open(directory / "shares.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["product_id", "day", "creative_id", "share"])
        for product_id, day, creative_id, share in report.display_shares:
            writer.writerow([product_id, day, creative_id, repr(share)])


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


def _per_product(impressions, features, candidates=None):
    """Index the log per product: sorted candidates, features, row arrays."""
    by_product: dict = {}
    order: list = []
    for rec in impressions:
        pid = rec[0]
        if pid not in by_product:
            by_product[pid] = []
            order.append(pid)
        by_product[pid].append(rec)
    products = {}
    for pid in sorted(order):
        rows = by_product[pid]
        roster = {r[1] for r in rows}
        if candidates and pid in candidates:
            roster.update(candidates[pid])
        cand_ids = tuple(sorted(roster))
        for cid in cand_ids:
            if cid not in features:
                raise MissingFeature(f"creative {cid!r} has no feature vector")
        F = np.array([np.asarray(features[cid], dtype=np.float64) for cid in cand_ids])
        index = {cid: i for i, cid in enumerate(cand_ids)}
        cidx = np.fromiter((index[r[1]] for r in rows), dtype=np.int64, count=len(rows))
        days = np.fromiter((r[2] for r in rows), dtype=np.int64, count=len(rows))
        clicks = np.fromiter((r[3] for r in rows), dtype=np.int64, count=len(rows))
        products[pid] = (cand_ids, F, cidx, days, clicks)
    return products


def oracle_ctr(impressions, candidate_rosters=None) -> float:
    """CTR of the per-product empirically best creative.

    For each product, pick the creative with the highest empirical CTR in the
    log, then pool those creatives' clicks and impressions across products.
    ``candidate_rosters`` (product -> expected creative ids) is optional and
    only used to warn about candidates that never appear in the log.
    """
    stats: dict = {}
    for pid, cid, _day, click in impressions:
        key = (pid, cid)
        if key in stats:
            entry = stats[key]
            entry[0] += 1
            entry[1] += click
        else:
            stats[key] = [1, click]
    if not stats:
        raise EmptyDataset("no impressions to compute an oracle CTR from")
    if candidate_rosters:
        logged = defaultdict(set)
        for pid, cid in stats:
            logged[pid].add(cid)
        for pid, roster in candidate_rosters.items():
            missing = set(roster) - logged.get(pid, set())
            if missing:
                warnings.warn(
                    f"product {pid!r}: candidates {sorted(missing)} have no "
                    "impressions and are excluded from the oracle"
                )
    best: dict = {}
    for (pid, cid), (imp, clk) in stats.items():
        rate = clk / imp
        cur = best.get(pid)
        # Ties go to the lexicographically first creative for determinism.
        if cur is None or rate > cur[0] or (rate == cur[0] and cid < cur[1]):
            best[pid] = (rate, cid, imp, clk)
    total_imp = sum(v[2] for v in best.values())
    total_clk = sum(v[3] for v in best.values())
    return total_clk / total_imp


def replay(
    policy: Policy,
    impressions,
    features,
    seed: int = 0,
    logging_policy: str = "uniform",
    collect_shares: bool = True,
    force_generic: bool = False,
    candidates: dict | None = None,
    meta: dict | None = None,
) -> EvalReport:
    """Rejection-replay a policy over a logged impression stream.

    ``impressions`` is an iterable of (product_id, creative_id, day, click)
    records in logged order; ``features`` maps creative id to its vector.
    Each product gets its own random stream derived from ``seed``, so reports
    are reproducible regardless of how products would be distributed across
    workers. Policies that declare ``is_static`` are evaluated with a
    vectorized pass (one choice per product); ``force_generic`` disables that
    shortcut so both paths can be cross-checked. ``candidates`` may extend a
    product's candidate set beyond the creatives its log happens to contain.
    """
    if logging_policy != "uniform":
        warnings.warn(
            f"replay assumes uniform logging for unbiasedness; dataset says "
            f"{logging_policy!r}"
        )
    impressions = list(impressions)
    if not impressions:
        raise EmptyDataset("cannot replay an empty impression log")
    products = _per_product(impressions, features, candidates)
    oracle = oracle_ctr(impressions)

    matched = 0
    clicked = 0
    day_counts: dict = defaultdict(lambda: [0, 0])  # day -> [impressions, clicks]
    shares: dict = defaultdict(int)  # (pid, day, cid) -> matched displays
    empty_products = 0

    for p_idx, pid in enumerate(products):
        cand_ids, F, cidx, days, clicks = products[pid]
        rng = rng_stream(seed, p_idx)
        product_matched = 0
        if policy.is_static and not force_generic:
            k = policy.choose_index(pid, cand_ids, F, rng)
            mask = cidx == k
            product_matched = int(mask.sum())
            matched += product_matched
            clicked += int(clicks[mask].sum())
            for day in np.unique(days[mask]):
                sel = mask & (days == day)
                day_counts[int(day)][0] += int(sel.sum())
                day_counts[int(day)][1] += int(clicks[sel].sum())
                if collect_shares:
                    shares[(pid, int(day), cand_ids[k])] += int(sel.sum())
        else:
            for i in range(cidx.size):
                k = policy.choose_index(pid, cand_ids, F, rng)
                if k != cidx[i]:
                    continue
                y = int(clicks[i])
                day = int(days[i])
                product_matched += 1
                matched += 1
                clicked += y
                day_counts[day][0] += 1
                day_counts[day][1] += y
                if collect_shares:
                    shares[(pid, day, cand_ids[k])] += 1
                policy.observe(pid, cand_ids[k], F[k], y)
        if product_matched == 0:
            empty_products += 1

    sctr = clicked / matched if matched else None
    regret = oracle - sctr if sctr is not None else None

    daily = []
    cum_imp = cum_clk = 0
    for day in sorted(day_counts):
        imp, clk = day_counts[day]
        cum_imp += imp
        cum_clk += clk
        daily.append((day, clk / imp if imp else None, cum_clk / cum_imp, imp))

    share_rows = []
    if collect_shares:
        day_totals: dict = defaultdict(int)
        for (pid, day, _cid), count in shares.items():
            day_totals[(pid, day)] += count
        for (pid, day, cid) in sorted(shares):
            share_rows.append((pid, day, cid, shares[(pid, day, cid)] / day_totals[(pid, day)]))

    return EvalReport(
        matched_impressions=matched,
        matched_clicks=clicked,
        sctr=sctr,
        oracle_ctr=oracle,
        regret=regret,
        daily=daily,
        display_shares=share_rows,
        products_total=len(products),
        products_without_matches=empty_products,
        meta=dict(meta or {}),
    )


def normalized_regret(report: EvalReport, uniform_report: EvalReport) -> float:
    """Regret as a fraction of the uniform policy's regret (1.0 = parity)."""
    if report.regret is None or uniform_report.regret is None:
        raise EmptyDataset("cannot normalize regret of a zero-match report")
    if uniform_report.regret == 0:
        raise ZeroDivisionError("uniform regret is zero; normalization undefined")
    return report.regret / uniform_report.regret


# ---------------------------------------------------------------------------
# Mushroom benchmark
# ---------------------------------------------------------------------------


@dataclass
class MushroomResult:
    """Trace of one mushroom run.

    Regret is measured in expectation against the oracle action (eat exactly
    the safe mushrooms): skipping a safe mushroom costs 5, eating a poisonous
    one costs 15 regardless of the reward lottery's outcome.
    """

    cumulative_regret: np.ndarray  # shape (rounds,)
    total_reward: float
    eat_count: int
    poisonous_eaten: int
    rounds: int

    @property
    def final_regret(self) -> float:
        return float(self.cumulative_regret[-1])


def mushroom_run(policy: Policy, data, rounds: int, seed: int = 0) -> MushroomResult:
    """Interact with the mushroom environment for a number of rounds.

    Each round samples a mushroom uniformly and offers two arms: "eat", whose
    context is the mushroom's encoded attributes, and "pass", a constant
    context with its own bias coordinate. Eating a safe mushroom pays +5;
    eating a poisonous one pays +5 or -35 with even odds; passing pays 0.
    The policy is updated with the realized reward of the arm it picked.

    When the policy declares ``group_attr``, rounds are keyed by that
    attribute's value so the policy maintains parameters per group; all other
    policies see a single shared key.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    enc = data.encoded
    n, width = enc.shape
    # Candidate contexts: eat carries the encoding, pass only its own bias.
    pass_ctx = np.zeros(width + 1)
    pass_ctx[width] = 1.0
    eat_ctx = np.zeros(width + 1)

    if policy.group_attr is not None:
        group_of = data.attribute_values(policy.group_attr)
    else:
        group_of = None

    rng = rng_stream(seed)
    candidates = (EAT, PASS)
    cum = np.empty(rounds)
    regret = 0.0
    total_reward = 0.0
    eat_count = 0
    poisonous_eaten = 0

    for r in range(rounds):
        idx = int(rng.integers(n))
        safe = bool(data.safe[idx])
        eat_ctx[:width] = enc[idx]
        F = np.vstack([eat_ctx, pass_ctx])
        key = "all" if group_of is None else f"group:{group_of[idx]}"
        k = policy.choose_index(key, candidates, F, rng)
        if k == 0:
            eat_count += 1
            if safe:
                reward = REWARD_SAFE_EAT
                step_regret = 0.0
            else:
                poisonous_eaten += 1
                good = rng.random() < POISON_GOOD_PROB
                reward = REWARD_POISON_EAT_GOOD if good else REWARD_POISON_EAT_BAD
                step_regret = -EXPECTED_POISON_EAT
        else:
            reward = 0.0
            step_regret = REWARD_SAFE_EAT if safe else 0.0
        policy.observe(key, candidates[k], F[k], reward)
        total_reward += reward
        regret += step_regret
        cum[r] = regret

    return MushroomResult(
        cumulative_regret=cum,
        total_reward=total_reward,
        eat_count=eat_count,
        poisonous_eaten=poisonous_eaten,
        rounds=rounds,
    )
