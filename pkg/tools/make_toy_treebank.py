"""Regenerate src/uidorder/data/toy_en.conllu (deterministic, 40 documents x 5 sentences)."""

import random
import sys
from pathlib import Path

NOUNS = ["dog", "cat", "man", "woman", "child", "teacher", "river", "city", "book", "house",
         "garden", "car", "bird", "letter", "friend", "story", "market", "road", "tree", "table"]
NAMES = ["Anna", "Tom", "Rome", "Paris", "Maria"]
TV = ["saw", "liked", "found", "read", "wrote", "built", "bought", "visited", "watched", "opened"]
IV = ["slept", "barked", "ran", "laughed", "arrived", "left", "waited", "sang"]
PASS = ["kicked", "found", "sold", "opened", "written"]
ADJ = ["big", "small", "old", "red", "happy", "quiet", "tall", "green"]
DET = ["the", "a", "this", "every", "my"]
PREP = ["in", "on", "near", "with", "from", "to"]
ADV = ["quickly", "often", "yesterday", "never", "slowly"]
SAY = ["said", "knew", "thought"]


def node(form, upos, rel, left=(), right=()):
    return {"form": form, "upos": upos, "rel": rel, "left": list(left), "right": list(right)}


def np_(rng, rel, allow_pp=True):
    if rng.random() < 0.15:
        return node(rng.choice(NAMES), "PROPN", rel)
    left = [node(rng.choice(DET), "DET", "det")]
    if rng.random() < 0.4:
        left.append(node(rng.choice(ADJ), "ADJ", "amod"))
    right = []
    if allow_pp and rng.random() < 0.25:
        right.append(pp(rng, "nmod", allow_pp=False))
    return node(rng.choice(NOUNS), "NOUN", rel, left, right)


def pp(rng, rel, allow_pp=True):
    n = np_(rng, rel, allow_pp)
    n["left"].insert(0, node(rng.choice(PREP), "ADP", "case"))
    return n


def clause(rng, rel, depth=0):
    kind = rng.random()
    left, right = [], []
    subj = np_(rng, "nsubj")
    if kind < 0.15:
        # copula: "the dog is happy"
        left = [subj, node(rng.choice(["is", "was"]), "AUX", "cop")]
        return node(rng.choice(ADJ), "ADJ", rel, left, right)
    if kind < 0.25:
        # passive: "the ball was kicked by the man"
        subj["rel"] = "nsubj:pass"
        left = [subj, node("was", "AUX", "aux:pass")]
        if rng.random() < 0.5:
            right.append(pp(rng, "obl"))
        return node(rng.choice(PASS), "VERB", rel, left, right)
    left.append(subj)
    if rng.random() < 0.2:
        left.append(node(rng.choice(["will", "can", "did"]), "AUX", "aux"))
    if rng.random() < 0.25:
        left.append(node(rng.choice(ADV), "ADV", "advmod"))
    if kind < 0.65:
        verb = rng.choice(TV)
        right.append(np_(rng, "obj"))
    elif kind < 0.8 and depth == 0:
        verb = rng.choice(SAY)
        sub = clause(rng, "ccomp", depth + 1)
        sub["left"].insert(0, node("that", "SCONJ", "mark"))
        right.append(sub)
    else:
        verb = rng.choice(IV)
    if rng.random() < 0.35:
        right.append(pp(rng, "obl"))
    if rng.random() < 0.15:
        right.append(node(rng.choice(ADV), "ADV", "advmod"))
    v = node(verb, "VERB", rel, left, right)
    if depth == 0 and rng.random() < 0.15:
        sub = clause(rng, "advcl", depth + 1)
        sub["left"].insert(0, node("because", "SCONJ", "mark"))
        v["right"].append(sub)
    elif depth == 0 and rng.random() < 0.15:
        sub = clause(rng, "conj", depth + 1)
        sub["left"].insert(0, node("and", "CCONJ", "cc"))
        sub["left"].insert(0, node(",", "PUNCT", "punct"))
        v["right"].append(sub)
    return v


def flatten(tree):
    out = []

    def walk(n, head_slot):
        slot = {"n": n, "head": head_slot}
        for c in n["left"]:
            walk(c, slot)
        out.append(slot)
        for c in n["right"]:
            walk(c, slot)

    walk(tree, None)
    for i, s in enumerate(out, start=1):
        s["index"] = i
    lines = []
    for s in out:
        n = s["n"]
        head = s["head"]["index"] if s["head"] else 0
        lines.append(f"{s['index']}\t{n['form']}\t_\t{n['upos']}\t_\t_\t{head}\t{n['rel']}\t_\t_")
    return lines


def main(out_path):
    rng = random.Random(7)
    blocks = []
    for d in range(40):
        blocks.append(f"# newdoc id = doc{d:02d}")
        for s in range(5):
            root = clause(rng, "root")
            root["right"].append(node(rng.choice([".", ".", ".", "!", "?"]), "PUNCT", "punct"))
            lines = flatten(root)
            first = lines[0].split("\t")
            first[1] = first[1][0].upper() + first[1][1:]
            lines[0] = "\t".join(first)
            text = " ".join(line.split("\t")[1] for line in lines)
            blocks.append(f"# sent_id = doc{d:02d}-{s}\n# text = {text}\n" + "\n".join(lines) + "\n")
    Path(out_path).write_text("\n".join(blocks) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/uidorder/data/toy_en.conllu")
