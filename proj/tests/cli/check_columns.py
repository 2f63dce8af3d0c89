"""Check a state CSV: every p and q value equal to the given constants (or zero)."""
import csv
import sys


def main():
    path, p, q, rel = sys.argv[1], float(sys.argv[2]), float(sys.argv[3]), float(sys.argv[4])
    scale = max(1.0, abs(p), abs(q))
    rows = 0
    worst = 0.0
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows += 1
            worst = max(worst, abs(float(r["p"]) - p), abs(float(r["q"]) - q))
    print(f"{rows} rows, max deviation {worst:.3e}")
    return 0 if rows > 0 and worst <= rel * scale else 1


if __name__ == "__main__":
    sys.exit(main())
