"""
Desk-scale directional checks on the low-resource comparison. They run the
full configs/low_resource.cfg grid (several hundred short runs) and are
deselected by default; run them with `pytest -m slow`.
"""

from pathlib import Path

import numpy as np
import pytest

from hypelab.config import load_config
from hypelab.runner import Runner

CONFIG = Path(__file__).parents[1] / "configs" / "low_resource.cfg"

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    config = load_config(CONFIG).with_output(str(tmp_path_factory.mktemp("low-resource")))
    return Runner(config, threads=4).run()


def rows(report, technique):
    return {a.task: a for a in report.aggregates if a.technique == technique}


def test_hype_n_keeps_up_with_vanilla(report):
    vanilla, hype = rows(report, "vanilla"), rows(report, "hype-n")
    tasks = [t for t in vanilla if t != "mean"]
    assert len(tasks) == 3
    for task in tasks:
        assert hype[task].mean >= vanilla[task].mean - 0.5, task
    assert sum(hype[t].mean >= vanilla[t].mean for t in tasks) >= 2


def test_dropout_does_not_help_hype_n(report):
    assert rows(report, "hype-n+dp")["mean"].mean <= rows(report, "hype-n")["mean"].mean


def test_every_delta_is_reported(report):
    for a in report.aggregates:
        assert a.delta is not None
        if a.technique == "vanilla":
            assert a.delta == 0.0


def test_hype_n_top_layer_is_less_anisotropic(report):
    def suite_top(technique):
        per_task = [e["mean"] for e in report.extra["top_layer_similarity"] if e["technique"] == technique]
        return float(np.mean(per_task))

    assert suite_top("hype-n") <= suite_top("vanilla") + 0.02
