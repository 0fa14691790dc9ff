"""Run shipped or user scenarios and print per-step outcomes.

    python scripts/run_scenario.py              # all shipped scenarios
    python scripts/run_scenario.py replay my.json --transcript out/
"""
import argparse
from pathlib import Path

from aeaka.sim import scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("names", nargs="*", help="shipped scenario names or JSON paths")
    ap.add_argument("--transcript", type=Path, help="directory for hex transcripts")
    args = ap.parse_args()

    bundled = scenario.shipped()
    ok = True
    for name in args.names or sorted(bundled):
        res = scenario.run(bundled.get(name) or name)
        ok &= res.passed
        print(f"== {res.scenario.name}: {'passed' if res.passed else 'FAILED'}")
        for o in res.outcomes:
            print(o.line())
        if args.transcript:
            args.transcript.mkdir(parents=True, exist_ok=True)
            (args.transcript / f"{res.scenario.name}.hex").write_text(res.transcript)
    raise SystemExit(0 if ok else 1)


if __name__ == "__main__":
    main()
