"""Bundled case-study blueprint and a generator of random valid walls."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .blueprint import Blueprint, validate_blueprint

GRID = 0.05  # m
BRICK_LENGTHS = (0.2, 0.3, 0.4)
BRICK_W = 0.2
BRICK_H = 0.1


def case_study_doc() -> dict:
    """Two pre-placed two-brick stacks, each waiting for one more brick on top."""
    text = resources.files("aerialmason").joinpath("data/case_study.json").read_text()
    return json.loads(text)


def case_study_path():
    return resources.files("aerialmason").joinpath("data/case_study.json")


def case_study() -> Blueprint:
    return Blueprint.load(case_study_doc())


def _q(x: float) -> float:
    return round(round(x / GRID) * GRID, 6)


def _row(rng: np.random.Generator, lower: list, budget: int) -> list:
    """Bricks for one layer; each rests on at least one brick of ``lower``."""
    if not lower:
        n = int(rng.integers(1, min(4, budget) + 1))
        x = 0.0
        out = []
        for _ in range(n):
            L = float(rng.choice(BRICK_LENGTHS))
            out.append((_q(x + L / 2), L))
            x = _q(x + L + GRID * int(rng.integers(0, 2)))
        return out
    lo = min(c - L / 2 for c, L in lower)
    hi = max(c + L / 2 for c, L in lower)
    out = []
    x = _q(lo + GRID * int(rng.integers(-2, 3)))
    while len(out) < budget and x < hi:
        L = float(rng.choice(BRICK_LENGTHS))
        c = _q(x + L / 2)
        supported = any(min(c + L / 2, lc + lL / 2) - max(c - L / 2, lc - lL / 2) >= GRID - 1e-9
                        for lc, lL in lower)
        if supported and rng.random() < 0.85:
            out.append((c, L))
            x = _q(c + L / 2 + GRID * int(rng.integers(0, 2)))
        else:
            x = _q(x + GRID * int(rng.integers(1, 4)))
    return out


def random_wall_doc(rng: np.random.Generator, max_bricks: int = 8,
                    params: dict | None = None) -> dict:
    """A valid single-row wall along x with up to ``max_bricks`` bricks.

    Positions sit on a 5 cm grid. The pre-placed subset is closed downward
    (a pre-placed brick only rests on pre-placed bricks). Pickups line up
    along y = -3 m, away from the wall.
    """
    while True:
        layers = []
        total = 0
        n_layers = int(rng.integers(1, 5))
        for _ in range(n_layers):
            row = _row(rng, layers[-1] if layers else [], max_bricks - total)
            if not row:
                break
            layers.append(row)
            total += len(row)
            if total >= max_bricks:
                break
        bricks = []
        placed: dict[int, bool] = {}
        prev_ids: list[tuple[int, float, float]] = []
        bid = 0
        for k, row in enumerate(layers):
            ids = []
            for c, L in row:
                supports = [pid for pid, lc, lL in prev_ids
                            if min(c + L / 2, lc + lL / 2) - max(c - L / 2, lc - lL / 2) > 1e-9]
                pre = all(placed[s] for s in supports) and rng.random() < 0.45
                placed[bid] = pre
                d = {"id": bid, "layer": k,
                     "target_center": [c, 0.0, round(k * BRICK_H + BRICK_H / 2, 6)],
                     "target_yaw": 0.0, "dims": [L, BRICK_W, BRICK_H],
                     "marker_ids": [2 * bid, 2 * bid + 1]}
                if pre:
                    d["pre_placed"] = True
                else:
                    d["pickup_approx"] = [round(-1.0 + 0.6 * bid, 6), -3.0, BRICK_H / 2]
                bricks.append(d)
                ids.append((bid, c, L))
                bid += 1
            prev_ids = ids
        doc = {"params": dict(params or {}), "bricks": bricks,
               "agents": [{"id": 0, "kind": "brick", "home": [-2.0, -4.0, 0.0]},
                          {"id": 1, "kind": "adhesion", "home": [-2.0, 2.0, 0.0]}]}
        if not validate_blueprint(doc):
            return doc
