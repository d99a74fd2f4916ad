#!/usr/bin/env python3
"""Writes data/demo_corpus.jsonl: 500 short captions over a small vocabulary.

The vocabulary is narrow on purpose so that edited captions land close to
other corpus captions and template mining finds targets.
"""

import argparse
import json
import random

NUMS = ["2", "3", "4", "5", "two", "three"]
ADJS = ["big", "small", "old", "young", "clean", "dirty", "wet", "dry", "red", "white", "black", "brown"]
ANIMALS = ["dog", "cat", "horse", "bird", "cow", "sheep"]
THINGS = ["car", "boat", "bench", "bicycle", "umbrella", "kite"]
PEOPLE = ["man", "woman", "child"]
VERBS = ["standing", "sitting", "running", "resting", "playing"]
PREPS = ["on", "in", "under", "beside"]
PLACES = ["grass", "beach", "street", "park", "field", "lake", "snow", "road"]

PLURAL = {"sheep": "sheep", "man": "men", "woman": "women", "child": "children", "bench": "benches"}


def plural(noun):
    return PLURAL.get(noun, noun + "s")


def caption(rng):
    pattern = rng.randrange(5)
    place = rng.choice(PLACES)
    prep = rng.choice(PREPS)
    if pattern == 0:
        return f"{rng.choice(NUMS)} {rng.choice(ADJS)} {plural(rng.choice(ANIMALS))} {rng.choice(VERBS)} {prep} the {place}"
    if pattern == 1:
        return f"a {rng.choice(ADJS)} {rng.choice(ANIMALS)} {rng.choice(VERBS)} {prep} the {place}"
    if pattern == 2:
        return f"a {rng.choice(PEOPLE)} with a {rng.choice(ADJS)} {rng.choice(THINGS)} {prep} the {place}"
    if pattern == 3:
        return f"{rng.choice(NUMS)} {plural(rng.choice(THINGS))} and a {rng.choice(ADJS)} {rng.choice(ANIMALS)} in the {place}"
    return f"a {rng.choice(ADJS)} {rng.choice(THINGS)} {prep} the {place}"


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/demo_corpus.jsonl")
    parser.add_argument("--count", type=int, default=500)
    parser.add_argument("--seed", type=int, default=2024)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    seen = set()
    rows = []
    while len(rows) < args.count:
        text = caption(rng)
        if text in seen:
            continue
        seen.add(text)
        rows.append({"id": len(rows) + 1, "caption": text})
    with open(args.out, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


if __name__ == "__main__":
    main()
