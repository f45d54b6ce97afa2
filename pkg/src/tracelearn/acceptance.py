"""Pass/fail assertions over study summaries (grid-averaged rates).

Each study maps to a list of checks; ``reproduce --assert`` evaluates the
ones belonging to the study it ran. Thresholds are in rate units (0.10 is
ten percentage points).
"""

from __future__ import annotations

from dataclasses import dataclass

from .evaluation import HAZARDOUS, NO_CUE, RECOVERY, SAFE, WITH_CUE
from .traces import NO_SOURCE, WITH_SOURCE


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


class MissingCellError(KeyError):
    def __str__(self):
        return str(self.args[0])


def rate(summary, kind, fraction, tagging, elicitation, trial, metric="exact_match_rate", k=None):
    rows = summary["summary"] if isinstance(summary, dict) else summary
    for s in rows:
        if (s["dataset_kind"] == kind and abs(s["fraction_expert"] - fraction) < 1e-9
                and s["tagging_mode"] == tagging and s["elicitation"] == elicitation
                and s["trial_kind"] == trial
                and (k is None or s["k"] is None or abs(s["k"] - k) < 1e-9)):
            return s[metric]
    raise MissingCellError(
        f"no summary row for {kind} f={fraction:g} {tagging} k={k} {elicitation} {trial}"
    )


def _at_least(name, value, bound, what):
    return Check(name, value >= bound - 1e-12, f"{what} = {value:+.3f} (need >= {bound:+.2f})")


def _at_most(name, value, bound, what):
    return Check(name, value <= bound + 1e-12, f"{what} = {value:+.3f} (need <= {bound:+.2f})")


def _guard(fn):
    def run(summary, *args, **kwargs):
        try:
            return fn(summary, *args, **kwargs)
        except MissingCellError as exc:
            return [Check(fn.__name__, False, f"missing: {exc}")]
    run.__name__ = fn.__name__
    return run


@_guard
def check_study1(summary) -> list[Check]:
    def r(kind, f, trial, metric="exact_match_rate"):
        return rate(summary, kind, f, NO_SOURCE, NO_CUE, trial, metric)

    out = []
    for kind, f in (("expert", 1.0), ("interaction", 0.0)):
        v = r(kind, f, SAFE)
        out.append(Check(f"study1.safe.{kind}", v >= 0.70, f"exact = {v:.3f} (need >= 0.70)"))
    gap = r("expert", 1.0, HAZARDOUS) - r("interaction", 0.0, HAZARDOUS)
    out.append(_at_least("study1.hazardous.exact_gap", gap, 0.20, "expert - interaction exact"))
    v = r("interaction", 0.0, HAZARDOUS, "correct_path_rate")
    out.append(Check("study1.hazardous.interaction_correct", v >= 0.60, f"correct = {v:.3f} (need >= 0.60)"))
    gap = (r("interaction", 0.0, RECOVERY, "correct_path_rate")
           - r("expert", 1.0, RECOVERY, "correct_path_rate"))
    out.append(_at_least("study1.recovery.correct_gap", gap, 0.20, "interaction - expert correct"))
    return out


@_guard
def check_study2a(summary, linear_fractions=(0.05, 0.25, 0.5), low=0.01,
                  silent_fractions=(0.01, 0.05, 0.25, 0.5)) -> list[Check]:
    out = []
    for f in linear_fractions:
        for e in (NO_CUE, WITH_CUE):
            v = rate(summary, "interaction", f, NO_SOURCE, e, HAZARDOUS)
            out.append(Check(f"study2a.linear.f{f:g}.{e}", abs(v - f) <= 0.10 + 1e-12,
                             f"exact = {v:.3f} vs fraction {f:g} (need within 0.10)"))
    best_plain = max(rate(summary, "interaction", low, NO_SOURCE, e, HAZARDOUS) for e in (NO_CUE, WITH_CUE))
    cued = rate(summary, "interaction", low, WITH_SOURCE, WITH_CUE, HAZARDOUS, k=1.0)
    out.append(_at_least(f"study2a.cue_lift.f{low:g}", cued - best_plain, 0.15,
                         "with-source cued - no-source"))
    for f in silent_fractions:
        v = rate(summary, "interaction", f, WITH_SOURCE, NO_CUE, HAZARDOUS, k=1.0)
        out.append(_at_most(f"study2a.no_cue_fails.f{f:g}", v, 0.05, "with-source uncued exact"))
    return out


@_guard
def check_study2b(summary, low=0.01, high=0.25) -> list[Check]:
    def gap(f):
        return (rate(summary, "interaction", f, WITH_SOURCE, WITH_CUE, HAZARDOUS)
                - rate(summary, "control", f, WITH_SOURCE, WITH_CUE, HAZARDOUS))

    return [
        _at_least(f"study2b.gap.f{low:g}", gap(low), 0.10, "interaction - control"),
        _at_most(f"study2b.gap.f{high:g}", abs(gap(high)), 0.05, "|interaction - control|"),
    ]


@_guard
def check_drop_tags(summary, k=0.5, fraction=0.01) -> list[Check]:
    cued = rate(summary, "interaction", fraction, WITH_SOURCE, WITH_CUE, HAZARDOUS, k=k)
    plain = rate(summary, "interaction", fraction, WITH_SOURCE, NO_CUE, HAZARDOUS, k=k)
    return [
        _at_least(f"drop_tags.k{k:g}.with_cue", cued - fraction, 0.10, "with-cue - linear baseline"),
        _at_most(f"drop_tags.k{k:g}.no_cue", abs(plain - fraction), 0.10, "|no-cue - linear baseline|"),
    ]


@_guard
def check_token_control(summary, manifests=None) -> list[Check]:
    rows = summary["summary"] if isinstance(summary, dict) else summary
    fractions = sorted({s["fraction_expert"] for s in rows if s["dataset_kind"] == "token_matched"})
    if not fractions:
        raise MissingCellError("no token_matched rows")
    f = fractions[0]
    gap = (rate(summary, "token_matched", f, WITH_SOURCE, WITH_CUE, HAZARDOUS)
           - rate(summary, "control", f, WITH_SOURCE, WITH_CUE, HAZARDOUS))
    out = [_at_least(f"token_control.gap.f{f:g}", gap, 0.10, "token-matched - control")]
    manifests = manifests if manifests is not None else summary.get("manifests", {})
    matched = [m for m in manifests.values() if "matched_to_tokens" in m.get("spec", {})]
    if not matched:
        out.append(Check("token_control.token_totals", False, "no token-matched manifests"))
    for m in matched:
        target = m["spec"]["matched_to_tokens"]
        slack = abs(m["total_tokens"] - target)
        out.append(Check(f"token_control.token_totals.{m['digest'][:8]}", slack < m["max_length"],
                         f"{m['total_tokens']} tokens vs control {target} "
                         f"(need gap < one trace, longest {m['max_length']})"))
    return out


CHECKS = {
    "study1": check_study1,
    "study2a": check_study2a,
    "study2b": check_study2b,
    "drop_tags": check_drop_tags,
    "token_control": check_token_control,
}


def checks_for(study: str, summary) -> list[Check]:
    return CHECKS[study](summary)
