from __future__ import annotations

import json

import pytest

from conftest import SCENARIOS
from lsa.scenario import ScenarioSpec, render_report, run_scenario

CORPUS = sorted(p for p in SCENARIOS.glob("*.json") if p.name != "topology.json")


def test_corpus_is_present():
    names = {p.stem for p in CORPUS}
    assert {"healthy", "one_down", "byzantine", "clock_skew", "three_down", "slow"} <= names


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_corpus_scenario_meets_expectations(path):
    report = run_scenario(ScenarioSpec.load(path))
    assert report["passed"], render_report(report)


@pytest.mark.parametrize("name", ["byzantine", "clock_skew", "three_down"])
def test_reports_are_byte_identical_across_runs(name):
    spec_path = SCENARIOS / f"{name}.json"
    first = json.dumps(run_scenario(ScenarioSpec.load(spec_path)), sort_keys=True)
    second = json.dumps(run_scenario(ScenarioSpec.load(spec_path)), sort_keys=True)
    assert first == second


def test_report_shape():
    report = run_scenario(ScenarioSpec.load(SCENARIOS / "byzantine.json"))
    entry = report["queries"][0]
    for key in ("query", "signers", "dissenters", "accepted", "checks"):
        assert key in entry
    assert entry["dissenters"] == ["node-4"]
    assert "node-4" not in entry["signers"]


def test_mismatch_is_reported(tmp_path):
    doc = json.loads((SCENARIOS / "one_down.json").read_text())
    doc["block_stream"] = str(SCENARIOS / "sample_blocks.jsonl")
    doc["queries"][0]["expect_signers"] = 5
    report = run_scenario(ScenarioSpec.from_json(doc, tmp_path))
    assert not report["passed"]
    assert report["queries"][0]["diff"] == ["4 signers != expected 5"]
    assert "MISMATCH" in render_report(report)
