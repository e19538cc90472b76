# SPDX-License-Identifier: MIT OR Apache-2.0
"""Regenerate the miniature corpora and bigram mock used by pipeline tests.

Writes crates/core/tests/fixtures/mini/{cec.csv, multithat.jsonl, cogs.csv,
magpie.jsonl, npn.jsonl, mock.json}.

Usage: python3 tools/make_mini_corpus.py
"""

import csv
import json
import os
import re

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
OUT = os.path.join(ROOT, "crates/core/tests/fixtures/mini")

CEC = [
    ("1", "I was so happy that I cried .", "CEC"),
    ("2", "It was so big that it fell .", "CEC"),
    ("3", "He was so tired that he slept .", "CEC"),
    ("4", "I felt so happy that I sang .", "EAP"),
    ("5", "She seemed so sad that we left .", "AAP"),
    ("6", "We felt so proud that we cheered .", "EAP"),
    ("7", "They seemed so calm that I stayed .", "AAP"),
    ("8", "It was so cold that we stayed .", "EAP"),
    ("9", "I was happy .", "CEC"),
]

MULTITHAT = [
    {"id": "m1", "sentence": "it was so big that we ran and so loud that we hid .",
     "so": [2, 8], "that": [4, 10], "gold": [[2, 4], [8, 10]]},
    {"id": "m2", "sentence": "so big that I know that we ran .",
     "so": [0], "that": [2, 5], "gold": [[0, 2]]},
    {"id": "m3", "sentence": "so that big that we ran .",
     "so": [0], "that": [1, 3], "gold": [[0, 3]]},
    {"id": "m4", "sentence": "so big that we ran .",
     "so": [0], "that": [2], "gold": [[0, 2]]},
]

COGS = [
    ("c1", "conative", "He kicked at the ball ."),
    ("c2", "causative-with", "She loaded the truck with books ."),
    ("c3", "way-manner", "We made our way home ."),
    ("c4", "comparative-correlative", "The more you eat , the bigger you get ."),
    ("c5", "let-alone", "I cannot walk let alone run ."),
    ("c6", "much-less", "I cannot walk much less run ."),
    ("c7", "comparative-correlative", "The higher the better ."),
    ("c8", "unknown-thing", "This is not a construction ."),
    ("c9", "comparative-correlative", "The merrier ."),
    ("c10", "comparative-correlative", "The smarter , the wiser ."),
    ("c11", "conative", "She shot at the target ."),
]

MAGPIE = [
    ("g1", "He will spill the beans .", "i", 1.0, ["spill", "the", "beans"], "spill the beans"),
    ("g2", "Do not spill the beans now , please .", "i", 1.0, ["spill", "the", "beans"], "spill the beans"),
    ("g3", "They saw him spill the beans on the floor today .", "l", 1.0, ["spill", "the", "beans"], "spill the beans"),
    ("g4", "The old man kicked the bucket .", "i", 1.0, ["kicked", "the", "bucket"], "kick the bucket"),
    ("g5", "She kicked the bucket over by the door of the barn .", "l", 1.0, ["kicked", "the", "bucket"], "kick the bucket"),
    ("g6", "He will spill the beans .", "i", 0.5, ["spill", "the", "beans"], "spill the beans"),
]

NPN = [
    ("n1", "We walked day after day .", "after", "day", 5, None),
    ("n2", "They stood face to face .", "to", "face", 5, None),
    ("n3", "He read book upon book .", "upon", "book", 4, None),
    ("n4", "We saw car by car .", "by", "car", 2, None),
    ("n5", "We ate cup to cup .", "to", "cup", 1, "unattested"),
    ("n6", "We walked day before day .", "after", "day", 5, None),
]

# previous word -> {next word: probability}
BIGRAM = {
    "was": {"so": 0.9, "happy": 0.1},
    "felt": {"so": 0.3, "happy": 0.7},
    "seemed": {"so": 0.6, "sad": 0.4},
    "kicked": {"at": 0.7, "the": 0.3},
    "truck": {"with": 0.6, ".": 0.4},
    "our": {"way": 0.8, "home": 0.2},
    "walk": {"let": 0.2, "much": 0.5, ".": 0.3},
    "let": {"alone": 0.9, "me": 0.1},
    "much": {"less": 0.4, "more": 0.6},
    "The": {"better": 0.4, "more": 0.3, "bigger": 0.29, "ball": 0.01},
    "the": {"better": 0.4, "more": 0.3, "bigger": 0.29, "ball": 0.01},
    "spill": {"the": 0.8, "it": 0.2},
    "after": {"day": 0.8, "week": 0.2},
    "to": {"face": 0.5, "cup": 0.1, "home": 0.4},
    "upon": {"book": 0.6, "time": 0.4},
    "by": {"car": 0.3, "day": 0.7},
    "shot": {"at": 0.4, "the": 0.6},
}

NOT_IN_VOCAB = {"smarter"}


def words_of(text):
    return re.findall(r"\w+|[^\w\s]+", text)


def main():
    os.makedirs(OUT, exist_ok=True)
    vocab = set()

    with open(os.path.join(OUT, "cec.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "sentence", "label"])
        for row in CEC:
            w.writerow(row)
            vocab.update(words_of(row[1]))

    with open(os.path.join(OUT, "multithat.jsonl"), "w") as f:
        for row in MULTITHAT:
            f.write(json.dumps(row) + "\n")
            vocab.update(words_of(row["sentence"]))

    with open(os.path.join(OUT, "cogs.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "construction", "sentence"])
        for row in COGS:
            w.writerow(row)
            vocab.update(words_of(row[2]))

    with open(os.path.join(OUT, "magpie.jsonl"), "w") as f:
        for ident, sent, label, conf, pie, idiom in MAGPIE:
            offsets, start = [], 0
            for word in pie:
                s = sent.index(" " + word + " ", start) + 1 if not sent.startswith(word) else 0
                offsets.append([s, s + len(word)])
                start = s + len(word)
            row = {"id": ident, "context": ["Before .", sent, "After ."] if ident == "g2" else sent,
                   "label": label, "confidence": conf, "offsets": offsets, "idiom": idiom}
            f.write(json.dumps(row) + "\n")
            vocab.update(words_of(sent))
        bad = {"id": "g7", "context": "He will spill the beans .", "label": "i", "confidence": 1.0,
               "offsets": [[9, 13]], "idiom": "spill the beans"}
        f.write(json.dumps(bad) + "\n")

    with open(os.path.join(OUT, "npn.jsonl"), "w") as f:
        for ident, sent, prep, noun, acc, set_ in NPN:
            row = {"id": ident, "sentence": sent, "prep": prep, "noun": noun, "acceptability": acc}
            if set_:
                row["set"] = set_
            f.write(json.dumps(row) + "\n")
            vocab.update(words_of(sent))

    for prev, row in BIGRAM.items():
        vocab.add(prev)
        vocab.update(row)
    vocab -= NOT_IN_VOCAB
    mock = {"model_id": "mini-bigram", "vocab": sorted(vocab), "kind": "bigram", "bigram": BIGRAM}
    with open(os.path.join(OUT, "mock.json"), "w") as f:
        json.dump(mock, f, indent=1, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
