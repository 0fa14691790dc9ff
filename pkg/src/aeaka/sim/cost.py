"""Per-run cost accounting and the cost table renderer."""
from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field

ROLES = ("device", "es", "cs")


@dataclass
class CostReport:
    case: str | None
    hash_counts: dict[str, int]
    roles: dict[str, str]
    messages: list[tuple[str, int]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def per_role(self) -> dict[str, int]:
        out: Counter = Counter()
        for label, n in self.hash_counts.items():
            out[self.roles.get(label, label or "?")] += n
        return dict(out)

    @property
    def total_hashes(self) -> int:
        return sum(self.hash_counts.values())

    @property
    def total_bits(self) -> int:
        return sum(bits for _, bits in self.messages)

    def signature(self) -> tuple:
        """Everything except wall-clock; equal across runs of the same case."""
        return (self.case, tuple(sorted(self.per_role().items())), tuple(self.messages))


def _case_name(case: str | None) -> str:
    return {"case1": "Case 1", "case2": "Case 2"}.get(case or "", str(case))


@dataclass
class CaseSummary:
    case: str
    runs: int
    hashes: dict[str, int]
    messages: list[tuple[str, int]]
    mean_ms: dict[str, float]

    @property
    def total_hashes(self) -> int:
        return sum(self.hashes.values())

    @property
    def total_bits(self) -> int:
        return sum(b for _, b in self.messages)


def summarize(reports: list[CostReport]) -> list[CaseSummary]:
    """Group reports by case; hash counts and sizes must not vary within a case."""
    by_case: dict[str, list[CostReport]] = {}
    for r in reports:
        by_case.setdefault(r.case or "failed", []).append(r)
    out = []
    for case in sorted(by_case):
        group = by_case[case]
        sigs = {r.signature() for r in group}
        if len(sigs) != 1:
            raise ValueError(f"{_case_name(case)}: hash counts or message sizes vary across runs")
        ms: Counter = Counter()
        for r in group:
            for label, secs in r.timings.items():
                ms[r.roles.get(label, label)] += secs * 1000
        first = group[0]
        out.append(CaseSummary(case, len(group), first.per_role(), list(first.messages),
                               {k: v / len(group) for k, v in ms.items()}))
    return out


def emit_cost_table(reports: CostReport | list[CostReport]) -> str:
    if isinstance(reports, CostReport):
        reports = [reports]
    lines = []
    header = f"{'Scheme':<14}{'Device':>8}{'ES':>8}{'CS':>8}{'Total':>8}  {'Msgs':>4}  {'Bits':>6}"
    lines.append(header)
    lines.append("-" * len(header))
    summaries = summarize(reports)
    for s in summaries:
        cells = [f"{s.hashes[r]}Th" if r in s.hashes else "-" for r in ROLES]
        lines.append(f"{'AEAKA ' + _case_name(s.case):<14}"
                     + "".join(f"{c:>8}" for c in cells)
                     + f"{str(s.total_hashes) + 'Th':>8}  {len(s.messages):>4}  {s.total_bits:>6}")
    lines.append("")
    for s in summaries:
        parts = " + ".join(f"|{name}| {bits}" for name, bits in s.messages)
        lines.append(f"{_case_name(s.case)}: {s.total_bits} bits ({parts})")
    lines.append("")
    lines.append("wall-clock per run, informational (ms):")
    for s in summaries:
        t = "  ".join(f"{r}={s.mean_ms[r]:.4f}" for r in ROLES if r in s.mean_ms)
        lines.append(f"  {_case_name(s.case)} over {s.runs} runs: {t}")
    return "\n".join(lines) + "\n"


def cost_csv(reports: list[CostReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "runs", "device_hashes", "es_hashes", "cs_hashes", "total_hashes",
                "messages", "total_bits", "device_ms", "es_ms", "cs_ms"])
    for s in summarize(reports):
        w.writerow([s.case, s.runs, *(s.hashes.get(r, 0) for r in ROLES), s.total_hashes,
                    " ".join(f"{n}:{b}" for n, b in s.messages), s.total_bits,
                    *(f"{s.mean_ms.get(r, 0.0):.6f}" for r in ROLES)])
    return buf.getvalue()
