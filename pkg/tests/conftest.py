import math

import numpy as np
import pytest
import torch

from stawgan.dataset import make_toy_dataset

torch.set_num_threads(1)


def polygon_corners(cx, cy, w, h, angle):
    """Corners of a rotated rectangle, screen-CCW rotation with y pointing down."""
    pts = []
    for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        dx, dy = sx * w / 2, sy * h / 2
        pts.append((cx + dx * math.cos(angle) + dy * math.sin(angle), cy - dx * math.sin(angle) + dy * math.cos(angle)))
    return pts


def point_in_polygon(x, y, poly):
    """Even-odd crossing-number test."""
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


def brute_force_mask(cx, cy, w, h, angle, height, width):
    poly = polygon_corners(cx, cy, w, h, angle)
    out = np.zeros((height, width), dtype=np.uint8)
    for i in range(height):
        for j in range(width):
            out[i, j] = point_in_polygon(j + 0.5, i + 0.5, poly)
    return out


@pytest.fixture(scope="session")
def toy_small(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_small")
    train = make_toy_dataset(root, 16, 32, seed=3)
    val = make_toy_dataset(root, 6, 32, seed=4, split="val")
    return train, val


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one pass/fail line per acceptance criterion; echoed in the terminal summary."""

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
