"""Writes the transcript fixtures and the golden MCQ calibration report.

The golden metrics are computed with exact rational arithmetic and rounded
once to the nearest double, so they do not share code or summation order
with the Rust implementation.
"""
import json
import re
from fractions import Fraction
from pathlib import Path

HERE = Path(__file__).parent

LISTING_MCQ = (
    "<reasoning>\nThe target product is a benzimidazolinone-like scaffold ...\n</reasoning>\n"
    "<answer>\nA\n</answer>\nConfidence: 0.8"
)
LISTING_TOOL = (
    "Thought: Retrieve a random axolotl image using the available tool.\n"
    "Action: Axolotl\nAction Input: {}\nConfidence: 0.95"
)


def mcq(answer, conf, reasoning="..."):
    tail = "" if conf is None else f"\nConfidence: {conf}"
    return f"<reasoning>\n{reasoning}\n</reasoning>\n<answer>\n{answer}\n</answer>{tail}"


MCQ_RECORDS = [
    ("chem-001", LISTING_MCQ, "A"),
    ("chem-002", mcq("B", "0.9"), "B"),
    ("chem-003", mcq("C", "0.9"), "A"),
    ("chem-004", mcq("D", "0.75"), "D"),
    ("chem-005", mcq("A", "0.6"), "C"),
    ("chem-006", mcq("B", "0.35"), "B"),
    ("chem-007", mcq("C", "0.2"), "D"),
    ("chem-008", mcq("D", "1.0"), "D"),
    # a draft answer block followed by the final one; the last block counts
    ("chem-009", "<answer>\nB\n</answer>\nOn reflection the ester is wrong.\n<answer>\nC\n</answer>\nConfidence: 0.55", "C"),
    # confidence without a usable answer, scored incorrect
    ("chem-010", mcq("A or B", "0.4"), "A"),
    # no confidence line: a format failure, excluded from the report
    ("chem-011", mcq("A", None), "A"),
    ("chem-012", mcq("B", ".05"), "A"),
]

TOOL_RECORDS = [
    ("tool-001", LISTING_TOOL, "Axolotl"),
    ("tool-002", 'Thought: Search for albino ones.\nAction: searchAxolotlImages\nAction Input: {"color": "albino",\n  "size": "small"}\nConfidence: 0.7', "searchAxolotlImages"),
    ("tool-003", 'Thought: Facts are needed.\nAction: getAxolotlFacts\nAction Input: {"category": "habitat"}\nConfidence: 0.6', "getRandomAxolotlImage"),
    ("tool-004", 'Thought: Not sure.\nAction: getAxolotlFacts\nAction Input: {"limit": 3}', "getAxolotlFacts"),
]


def write_jsonl(path, rows, domain, prompt=None):
    with open(path, "w") as f:
        for rid, text, gold in rows:
            rec = {"id": rid, "response_text": text, "gold": gold, "domain_tag": domain}
            if prompt is not None:
                rec["prompt_text"] = prompt
            f.write(json.dumps(rec) + "\n")


# --- independent parsing -------------------------------------------------

def confidence(text):
    found = None
    for line in text.split("\n"):
        m = re.fullmatch(r"\s*Confidence:\s*(\d+(?:\.\d*)?|\.\d+)\s*", line)
        if m:
            found = m.group(1)
    if found is None:
        return None
    v = Fraction(found)
    return v if 0 <= v <= 1 else None


def answer(text):
    blocks = re.findall(r"<answer>(.*?)</answer>", text, re.S)
    if not blocks:
        return None
    a = blocks[-1].strip()
    return a if a in ("A", "B", "C", "D") else None


# --- exact metrics ------------------------------------------------------

def f(x):
    return float(x) if x is not None else None


def report(records, bins):
    n = len(records)
    acc = Fraction(sum(1 for _, y in records if y), n)
    conf = sum((c for c, _ in records), Fraction(0)) / n
    brier = sum(((c - (1 if y else 0)) ** 2 for c, y in records), Fraction(0)) / n
    out_bins = []
    ece = Fraction(0)
    for b in range(bins):
        lo, hi = Fraction(b, bins), Fraction(b + 1, bins)
        members = [(c, y) for c, y in records if (lo < c <= hi) or (b == 0 and c == 0)]
        k = len(members)
        if k:
            mc = sum((c for c, _ in members), Fraction(0)) / k
            ma = Fraction(sum(1 for _, y in members if y), k)
            ece += Fraction(k, n) * abs(ma - mc)
        out_bins.append({
            "lower": float(lo), "upper": float(hi),
            "mean_conf": f(mc) if k else None, "acc": f(ma) if k else None,
            "count": k, "weight": float(k),
        })
    pos = [c for c, y in records if y]
    neg = [c for c, y in records if not y]
    if pos and neg:
        total = len(pos) * len(neg)
        gt = sum(1 for p in pos for q in neg if p > q)
        tie = sum(1 for p in pos for q in neg if p == q)
        spr, auroc, tp = Fraction(gt, total), Fraction(2 * gt + tie, 2 * total), Fraction(tie, total)
    else:
        spr = auroc = tp = None
    return {
        "n": n, "accuracy": float(acc), "mean_confidence": float(conf),
        # OCG is defined on the reported (rounded) fields
        "ocg": float(conf) - float(acc), "ece": float(ece), "brier": float(brier),
        "spr": f(spr), "auroc": f(auroc), "tie_probability": f(tp),
        "num_bins": bins, "bins": out_bins,
    }


def main():
    write_jsonl(HERE / "mcq.jsonl", MCQ_RECORDS, "science_qa")
    write_jsonl(HERE / "tool.jsonl", TOOL_RECORDS, "tool_use", prompt="Hey, can you show me a random picture of an axolotl?")
    scored = []
    for _, text, gold in MCQ_RECORDS:
        c = confidence(text)
        if c is not None:
            scored.append((c, answer(text) == gold))
    with open(HERE / "mcq_calibration.golden.json", "w") as fh:
        fh.write(json.dumps(report(scored, 10), indent=2) + "\n")


if __name__ == "__main__":
    main()
