"""Re-derive every label in labeled.jsonl from the filter rules alone.

Independent of the Rust implementation. Exits 1 on any disagreement.

    python3 recheck.py [labeled.jsonl]

Rules, first match wins:
  no_select             no final SQL found, or its first keyword (after any
                        comments) is not SELECT
  duplicate_sql_in_cot  the final SQL (whitespace-normalized, trailing ';'
                        dropped) occurs at least twice in the normalized CoT
  comment_marker        the final SQL contains '--'
  prompt_too_long       ceil(chars / 4) of the rendered generation prompt > 7000
"""

import json
import math
import re
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
TEMPLATE = (HERE.parents[2] / "templates" / "generation.txt").read_text()
TOKEN_LIMIT = 7000

FENCE = re.compile(r"```([A-Za-z0-9]*)[ \t]*\n(.*?)```", re.S)
SELECT_WORD = re.compile(r"(?<![A-Za-z0-9_])select(?![A-Za-z0-9_])", re.I)
COMPOUND = ("UNION", "ALL", "INTERSECT", "EXCEPT")


def final_sql(cot):
    m = re.search(r"<think>(.*?)</think>", cot, re.S)
    if m and "<answer>" in cot:
        a = re.search(r"<answer>(.*?)</answer>", cot[m.end():], re.S)
        if a:
            return a.group(1).strip()
    fences = FENCE.findall(cot)
    tagged = [body for info, body in fences if info.lower() in ("sql", "sqlite")]
    untagged = [body for info, body in fences if info == ""]
    for pool in (tagged, untagged):
        if pool and pool[-1].strip():
            return pool[-1].strip()
    starts = []
    for m in SELECT_WORD.finditer(cot):
        before = cot[: m.start()].rstrip()
        prev_word = re.search(r"[A-Za-z0-9_]*$", before).group(0).upper()
        if before.endswith("(") or prev_word in COMPOUND:
            continue
        starts.append(m.start())
    if not starts:
        return None
    rest = cot[starts[-1]:]
    cuts = [len(rest)]
    if ";" in rest:
        cuts.append(rest.index(";") + 1)
    for stop in ("\n\n", "</", "<answer"):
        if stop in rest:
            cuts.append(rest.index(stop))
    return rest[: min(cuts)].strip()


def opens_with_select(sql):
    rest = sql
    while True:
        rest = rest.lstrip()
        if rest.startswith("--"):
            rest = rest.split("\n", 1)[1] if "\n" in rest else ""
        elif rest.startswith("/*"):
            rest = rest.split("*/", 1)[1] if "*/" in rest else ""
        elif rest.startswith("("):
            rest = rest[1:]
        else:
            break
    return re.match(r"select(?![A-Za-z0-9_])", rest, re.I) is not None


def squash(s):
    return " ".join(s.split())


def render(sample):
    t = TEMPLATE[:-1] if TEMPLATE.endswith("\n") else TEMPLATE
    ev = sample.get("evidence")
    keep = [l for l in t.split("\n") if not (l.strip() == "{EVIDENCE}" and not (ev or "").strip())]
    out = "\n".join(keep)
    return out.replace("{DATABASE SCHEMA}", sample.get("schema_ddl", "")).replace("{QUESTION}", sample["question"]).replace("{EVIDENCE}", ev or "")


def label(sample):
    cot = sample.get("cot") or ""
    sql = final_sql(cot)
    if not sql or not opens_with_select(sql):
        return "no_select"
    needle = squash(sql.rstrip("; \t\n"))
    if needle and squash(cot).count(needle) >= 2:
        return "duplicate_sql_in_cot"
    if "--" in sql:
        return "comment_marker"
    if math.ceil(len(render(sample)) / 4) > TOKEN_LIMIT:
        return "prompt_too_long"
    return "accept"


def main():
    path = Path(sys.argv[1]) if len(sys.argv) > 1 else HERE / "labeled.jsonl"
    bad = 0
    total = 0
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        s = json.loads(line)
        total += 1
        got = label(s)
        if got != s["expected"]:
            bad += 1
            print(f"{s['task_id']}: labeled {s['expected']}, rules give {got}")
    print(f"{total - bad}/{total} labels confirmed")
    sys.exit(1 if bad else 0)


if __name__ == "__main__":
    main()
