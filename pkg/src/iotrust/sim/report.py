"""Run reports: delimited data, a JSON summary, the ledger dump, figures.

Every file a report writes is byte-deterministic for a given run result:
JSON is sorted-key, CSV rows follow the run's insertion order, and the PNG
encoder is stripped of its software stamp.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .engine import RunResult

#: savefig keywords that keep PNG output stable across environments
_PNG_KW = {"dpi": 100, "metadata": {"Software": None}}


def write_report(result: RunResult, out_dir: Union[str, Path], *,
                 figures: bool = True) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    written.append(summary_path)

    windows_path = out / "windows.csv"
    with windows_path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["src", "dst", "sequence", "window", "time", "m_r", "anomalous"])
        for (src, dst), edge in result.edges.items():
            for w in edge.windows:
                writer.writerow([src, dst, w.sequence, w.index,
                                 repr(w.time), repr(w.m_r), int(w.anomalous)])
    written.append(windows_path)

    reliability_path = out / "reliability.csv"
    with reliability_path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["time", "node", "reliability"])
        for when, snapshot in result.reliability_series:
            for node, value in snapshot.items():
                writer.writerow([repr(when), node, repr(value)])
    written.append(reliability_path)

    consensus_path = out / "consensus.csv"
    with consensus_path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["time", "source", "target", "trustworthiness",
                         "consensus_size", "paths", "voided", "forged", "informed"])
        for a in result.assessments:
            writer.writerow([
                repr(a.time), a.source, a.target,
                "" if a.trustworthiness is None else repr(a.trustworthiness),
                a.consensus_size, a.paths, a.voided, a.forged, int(a.informed)])
    written.append(consensus_path)

    ledger_path = out / "ledger.jsonl"
    ledger_path.write_text(result.ledger.dumps())
    written.append(ledger_path)

    if figures:
        written.append(_misprediction_figure(result, out / "mispredictions.png"))
        written.append(_trust_figure(result, out / "trustworthiness.png"))
        written.append(_reliability_figure(result, out / "reliability.png"))
    return written


def _attack_spans(result: RunResult) -> List[tuple]:
    spans = []
    for attack in result.scenario.attacks:
        end = attack.end if attack.end is not None else result.scenario.duration
        spans.append((attack.start, end, attack.kind))
    return spans


def _misprediction_figure(result: RunResult, path: Path) -> Path:
    proto = result.scenario.protocol
    fig, ax = plt.subplots(figsize=(9, 4.5))
    attacked = [e for e in result.edges.values() if e.attacked_from is not None]
    benign = [e for e in result.edges.values() if e.attacked_from is None]
    chosen = attacked + benign[:3]
    for edge in chosen:
        xs = [w.time for w in edge.windows]
        ys = [w.m_r for w in edge.windows]
        style = "-" if edge.attacked_from is not None else "--"
        ax.plot(xs, ys, style, linewidth=1.0, label=f"{edge.src}->{edge.dst}")
    ax.axhline(proto.anomaly_threshold, color="black", linewidth=0.8,
               linestyle=":", label="threshold")
    for start, end, kind in _attack_spans(result):
        ax.axvspan(start, end, color="red", alpha=0.08)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("window misprediction rate")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(f"{result.scenario.name}: misprediction rate per window")
    ax.legend(loc="center left", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_PNG_KW)
    plt.close(fig)
    return path


def _trust_figure(result: RunResult, path: Path) -> Path:
    proto = result.scenario.protocol
    fig, ax = plt.subplots(figsize=(9, 4.5))
    for (source, target), series in result.trust_series.items():
        xs = [t for t, _ in series]
        ys = [v for _, v in series]
        ax.plot(xs, [float("nan") if v is None else v for v in ys],
                marker="o", markersize=3, linewidth=1.0,
                label=f"{source} about {target}")
    ax.axhline(proto.trust_decision, color="black", linewidth=0.8,
               linestyle=":", label="decision threshold")
    for start, end, kind in _attack_spans(result):
        ax.axvspan(start, end, color="red", alpha=0.08)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("trustworthiness T")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(f"{result.scenario.name}: consensus trustworthiness")
    ax.legend(loc="center left", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_PNG_KW)
    plt.close(fig)
    return path


def _reliability_figure(result: RunResult, path: Path) -> Path:
    proto = result.scenario.protocol
    fig, ax = plt.subplots(figsize=(9, 4.5))
    if result.reliability_series:
        nodes = list(result.reliability_series[0][1])
        xs = [when for when, _ in result.reliability_series]
        moved = [n for n in nodes
                 if len({snap[n] for _, snap in result.reliability_series}) > 1]
        steady = [n for n in nodes if n not in moved]
        for node in moved:
            ax.plot(xs, [snap[node] for _, snap in result.reliability_series],
                    marker="o", markersize=3, linewidth=1.2, label=node)
        if steady:
            ax.plot(xs, [result.reliability_series[0][1][steady[0]]] * len(xs),
                    color="gray", linewidth=0.8,
                    label=f"{len(steady)} unchanged nodes")
    ax.axhline(proto.c_th, color="black", linewidth=0.8, linestyle=":",
               label="c_th")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("reliability")
    ax.set_ylim(-0.05, 1.1)
    ax.set_title(f"{result.scenario.name}: ledger reliability")
    ax.legend(loc="center left", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_PNG_KW)
    plt.close(fig)
    return path


def inspect_summary(path: Union[str, Path]) -> Dict[str, object]:
    """Load a summary.json and sanity-check its shape; raises on malformed input."""
    doc = json.loads(Path(path).read_text())
    for key in ("scenario", "seed", "edges", "violations", "ledger_ok"):
        if key not in doc:
            raise ValueError(f"summary is missing the {key!r} field")
    return doc


def describe_summary(doc: Dict[str, object]) -> str:
    lines = [
        f"scenario   {doc['scenario']} (seed {doc['seed']})",
        f"edges      {len(doc['edges'])}",
        f"assessments {doc.get('assessments', 0)}",
        f"ledger     {doc.get('ledger_blocks', '?')} blocks, "
        f"ok={doc['ledger_ok']}",
    ]
    informed = doc.get("informed", {})
    for pair, when in informed.items():
        status = "never" if when is None else f"t={when:g}"
        lines.append(f"informed   {pair}: {status}")
    mean = doc.get("propagation_packets_mean")
    if mean is not None:
        lines.append(f"propagation {mean:.1f} attacker packets (mean)")
    violations = doc.get("violations", [])
    if violations:
        lines.append(f"VIOLATIONS ({len(violations)}):")
        lines.extend(f"  - {v}" for v in violations)
    else:
        lines.append("violations none")
    return "\n".join(lines)
