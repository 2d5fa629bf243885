"""Smoke test for the idlease Python extension.

Build first: pip install --no-build-isolation ./crates/py
"""

import json
import pathlib
import sys

import idlease

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCEN = ROOT / "crates" / "core" / "scenarios"


def main():
    s = idlease.Scenario.load(str(SCEN / "baseline.toml"))
    assert s.name == "baseline", s
    r = s.run()
    rep = json.loads(r.report_json)
    assert all(sl["settled"] for sl in rep["campaigns"][0]["slots"])
    assert r.harmed() == []
    assert r.check_invariants() == []
    assert r.report_digest == idlease.run(s).report_digest, "runs must be deterministic"
    height, ok = idlease.check_chain(r.chain_dump)
    assert ok and height > 0
    assert idlease.verify_report(r.report_json, r.event_log) == []

    s = idlease.Scenario.load(str(SCEN / "cut45b.toml"))
    r = s.run()
    assert sorted(r.harmed()) == ["owner:2", "renter:0"], r.verdict()
    assert dict(r.verdict())["host:0"] == "fair (self-harm)"

    svc, pay = idlease.estimate(1000, 25, 25)
    assert (round(svc, 3), round(pay, 3)) == (171.52, 197.4), (svc, pay)

    try:
        idlease.Scenario.from_toml("[[adversary]]\naction = 'cut'\ncut = 6\n")
    except idlease.SchemaError as e:
        assert "cut" in str(e)
    else:
        sys.exit("cut 6 accepted")

    print("python smoke test ok")


if __name__ == "__main__":
    main()
