#!/usr/bin/env python3
"""Writes the bundled mini dataset (MovieLens .dat layout) and its config."""

import argparse
import json
import random
from pathlib import Path

GENRES = ["Action", "Adventure", "Comedy", "Crime", "Drama", "Horror", "Romance", "Sci-Fi"]


def build(seed, n_users, n_items):
    rng = random.Random(seed)
    movies = []
    for item in range(1, n_items + 1):
        if item % 40 == 0:
            genres = []  # a few items without genres
        else:
            genres = sorted(rng.sample(GENRES, rng.choice([1, 1, 2, 3])), key=GENRES.index)
        movies.append((item, f"Movie {item} ({1980 + item % 40})", genres))

    # two taste groups plus individual noise
    tastes = [GENRES[:4], GENRES[4:]]
    ratings = []
    ts = 978300000
    for user in range(1, n_users + 1):
        liked = set(tastes[user % 2]) | {rng.choice(GENRES)}
        count = 12 if user == n_users else rng.randint(55, 90)  # the last user is too sparse to keep
        for item, _, genres in rng.sample(movies, count):
            affinity = sum(g in liked for g in genres) / max(len(genres), 1)
            score = 1.5 + 3.0 * affinity + rng.gauss(0.0, 0.7)
            ratings.append((user, item, min(5, max(1, round(score))), ts))
            ts += rng.randint(1, 500)
    return movies, ratings


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "mini")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--users", type=int, default=61)
    ap.add_argument("--items", type=int, default=240)
    args = ap.parse_args()

    movies, ratings = build(args.seed, args.users, args.items)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "movies.dat", "w", encoding="utf-8") as f:
        for item, title, genres in movies:
            f.write(f"{item}::{title}::{'|'.join(genres) if genres else '(no genres listed)'}\n")
    with open(args.out / "ratings.dat", "w", encoding="utf-8") as f:
        for user, item, score, ts in ratings:
            f.write(f"{user}::{item}::{score}::{ts}\n")

    config = {
        "dataset": {"name": "mini", "format": "movielens", "ratings": "ratings.dat", "movies": "movies.dat",
                    "scale": [0, 5]},
        "min_user_interactions": 50,
        "score_mode": "both",
        "folds": 5,
        "seed": 42,
        "mf": {"n_trials": 3, "cv_folds": 3, "n_candidates": 100},
        "calibration": {"list_size": 10, "alpha": 0.01, "divergence": "emanon2"},
        "output_dir": "../../out/mini",
        "workers": 1,
    }
    with open(args.out / "config.json", "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
