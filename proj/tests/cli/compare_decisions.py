"""Compare two decisions CSVs value by value."""
import csv
import sys


def load(path):
    with open(path, newline="") as fh:
        return {(r["agent"], r["node"], r["variable"], r["k"]): float(r["value"]) for r in csv.DictReader(fh)}


def main():
    a, b, tol = load(sys.argv[1]), load(sys.argv[2]), float(sys.argv[3])
    if a.keys() != b.keys():
        print("decision sets differ")
        return 1
    worst = max(abs(a[k] - b[k]) for k in a)
    print(f"max difference {worst:.3e} (tolerance {tol:g})")
    return 0 if worst <= tol else 1


if __name__ == "__main__":
    sys.exit(main())
