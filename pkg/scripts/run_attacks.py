"""Run every attack battery over several seeds and tabulate rejections."""
import argparse

from aeaka.sim.attacks import ATTACKS, AttackOutcome, run_attack


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()

    failed = False
    for name in ATTACKS:
        total = AttackOutcome(name)
        for seed in range(args.seeds):
            total.merge(run_attack(name, seed=seed))
        failed |= not total.ok
        print(total.summary())
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
