import csv
import math


def calculate_correlation(csv_path, column1, column2):
    """Pearson correlation between two numeric columns of a CSV file."""
    with open(csv_path, newline="") as f:
        rows = list(csv.DictReader(f))
    xs = [float(r[column1]) for r in rows]
    ys = [float(r[column2]) for r in rows]
    mx = sum(xs) / len(xs)
    my = sum(ys) / len(ys)
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sx = math.sqrt(sum((x - mx) ** 2 for x in xs))
    sy = math.sqrt(sum((y - my) ** 2 for y in ys))
    return round(cov / (sx * sy), 12)
