"""Random block-structured process models for benchmarks and tests.

A model is drawn as a process tree (sequence, exclusive choice, parallel,
loop) over distinct activity labels and expanded into its finite language.
Loops run at most twice, matching the playout bound used for nets.
"""
from __future__ import annotations

import itertools
import random
from typing import FrozenSet, List, Optional, Sequence, Tuple

from .core import ProcessModel

VERBS = ["Create", "Approve", "Check", "Send", "Receive", "Record", "Review", "Update",
         "Cancel", "Register", "Verify", "Archive", "Reject", "Schedule", "Notify", "Pay",
         "Assess", "Prepare", "Sign", "Ship"]
OBJECTS = ["Order", "Invoice", "Request", "Contract", "Goods", "Payment", "Application",
           "Claim", "Report", "Customer", "Offer", "Delivery", "Ticket", "Document",
           "Account", "Appointment"]

Lang = FrozenSet[Tuple[str, ...]]


class LanguageTooLarge(Exception):
    pass


def _shuffle(u: Tuple[str, ...], v: Tuple[str, ...]):
    n, m = len(u), len(v)
    for slots in itertools.combinations(range(n + m), n):
        out, iu, iv, s = [], 0, 0, set(slots)
        for k in range(n + m):
            if k in s:
                out.append(u[iu])
                iu += 1
            else:
                out.append(v[iv])
                iv += 1
        yield tuple(out)


def _check(lang: set, cap: int) -> Lang:
    if len(lang) > cap:
        raise LanguageTooLarge
    return frozenset(lang)


def _tree_language(rng: random.Random, labels: List[str], cap: int, depth: int) -> Lang:
    if len(labels) == 1:
        return frozenset({(labels[0],)})
    ops = ["seq"] * 4 + ["xor"] * 2 + ["and"] + ["loop"]
    op = rng.choice(ops) if depth < 4 else "seq"
    if op == "loop" and len(labels) >= 2:
        cut = rng.randint(1, len(labels) - 1)
        body = _tree_language(rng, labels[:cut], cap, depth + 1)
        redo = _tree_language(rng, labels[cut:], cap, depth + 1)
        lang = set(body)
        for b1 in body:
            for r in redo:
                for b2 in body:
                    lang.add(b1 + r + b2)
                    if len(lang) > cap:
                        raise LanguageTooLarge
        return _check(lang, cap)
    n_children = rng.randint(2, min(3, len(labels)))
    cuts = sorted(rng.sample(range(1, len(labels)), n_children - 1))
    parts = [labels[i:j] for i, j in zip([0] + cuts, cuts + [len(labels)])]
    children = [_tree_language(rng, p, cap, depth + 1) for p in parts]
    lang: set = {()}
    if op == "xor":
        return _check(set().union(*children), cap)
    for child in children:
        if op == "seq":
            lang = {u + v for u in lang for v in child}
        else:
            lang = {w for u in lang for v in child for w in _shuffle(u, v)}
        if len(lang) > cap:
            raise LanguageTooLarge
    return _check(lang, cap)


def activity_labels(rng: random.Random, n: int) -> List[str]:
    pool = [f"{v} {o}" for v in VERBS for o in OBJECTS]
    return rng.sample(pool, n)


def random_model(model_id: str, n_activities: int, seed: int = 0, max_sequences: int = 120,
                 labels: Optional[Sequence[str]] = None) -> ProcessModel:
    """Draw a model over ``n_activities`` labels whose language has at most
    ``max_sequences`` members. Retries with a fresh tree when too large and
    falls back to a plain sequence after 50 attempts."""
    rng = random.Random(f"{model_id}:{seed}")
    labels = list(labels) if labels is not None else activity_labels(rng, n_activities)
    for _ in range(50):
        try:
            lang = _tree_language(rng, list(labels), max_sequences, 0)
        except LanguageTooLarge:
            continue
        return ProcessModel(model_id, tuple(sorted(lang)), frozenset(labels))
    return ProcessModel(model_id, (tuple(labels),), frozenset(labels))


def random_models(n: int, seed: int = 0, min_activities: int = 5, max_activities: int = 15,
                  prefix: str = "m", max_sequences: int = 120) -> List[ProcessModel]:
    """``n`` models with pairwise distinct activity sets."""
    rng = random.Random(seed)
    out, seen = [], set()
    i = 0
    while len(out) < n:
        size = rng.randint(min_activities, max_activities)
        m = random_model(f"{prefix}{i:03d}", size, seed, max_sequences)
        i += 1
        if m.alphabet in seen:
            continue
        seen.add(m.alphabet)
        out.append(m)
    return out
