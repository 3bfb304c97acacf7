"""Optional PNG figures written next to the CSV reports.

matplotlib is imported lazily so the core package never depends on it.
"""

from __future__ import annotations

from pathlib import Path

from .cost import DELAY_PARTS, ENERGY_PARTS, CostReport


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("figures need matplotlib; install the 'plots' extra") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    # no software/date metadata, so the PNG bytes repeat across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    return path


def layer_cost_figure(report: CostReport, path) -> Path:
    """Stacked per-layer delay and energy bars."""
    plt = _pyplot()
    names = [l.layer for l in report.layers]
    fig, (ax_d, ax_e) = plt.subplots(1, 2, figsize=(10, 4))
    for ax, parts, attr, unit in ((ax_d, DELAY_PARTS, "delay", "ns"), (ax_e, ENERGY_PARTS, "energy", "pJ")):
        bottom = [0.0] * len(names)
        for p in parts:
            vals = [getattr(l, attr)[p] for l in report.layers]
            if any(vals):
                ax.bar(names, vals, bottom=bottom, label=p)
                bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_ylabel(f"{attr} ({unit})")
        ax.tick_params(axis="x", rotation=45)
        ax.legend(fontsize=8)
    fig.suptitle(f"{report.network}: {report.delay_ns:.1f} ns, {report.energy_pj:.0f} pJ")
    fig.tight_layout()
    out = _save(fig, Path(path))
    plt.close(fig)
    return out


def sweep_figure(axis: str, rows: list, path) -> Path:
    """Delay and energy against the swept value."""
    plt = _pyplot()
    labels = [str(r["value"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(labels, [r["delay_ns"] for r in rows], "o-", label="delay (ns)")
    ax.set_xlabel(axis)
    ax.set_ylabel("delay (ns)")
    ax2 = ax.twinx()
    ax2.plot(labels, [r["energy_pj"] for r in rows], "s--", color="tab:red", label="energy (pJ)")
    ax2.set_ylabel("energy (pJ)")
    fig.tight_layout()
    out = _save(fig, Path(path))
    plt.close(fig)
    return out
