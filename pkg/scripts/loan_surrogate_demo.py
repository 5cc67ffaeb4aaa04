"""End-to-end run on a synthetic loan book with categorical features.

    python3 scripts/loan_surrogate_demo.py [--out results/loan_demo]

Default is event 1, early repayment is event 2; accounts are classified with
a 0.5 threshold on the predicted probability of event 1.
"""
import argparse
import json

from wdr.experiments import run_loan_pipeline


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/loan_demo")
    p.add_argument("--n-train", type=int, default=1500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=11)
    a = p.parse_args()
    res = run_loan_pipeline(a.out, a.n_train, a.n_test, a.seed, a.k, a.iters, a.burnin)
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
