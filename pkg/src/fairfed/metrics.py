"""Client-level fairness and performance metrics.

Accuracies are fractions internally; :meth:`MetricsReport.as_percent`
converts at the reporting boundary.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .nn import Batch, ModelParams, accuracy


class DegenerateInputError(DomainError):
    """Statistic undefined for the given input (e.g. zero variance)."""


def client_std(accs) -> float:
    """Population standard deviation of client accuracies."""
    a = np.asarray(accs, dtype=np.float64)
    if a.size < 2:
        raise DomainError("client_std needs at least two clients")
    return float(np.sqrt(np.mean((a - a.mean()) ** 2)))


def psi(acc_method, acc_fedavg, upsilons) -> float:
    """Gain over FedAvg of the most uncertain client minus the mean gain of the rest."""
    m = np.asarray(acc_method, dtype=np.float64)
    f = np.asarray(acc_fedavg, dtype=np.float64)
    u = np.asarray(upsilons, dtype=np.float64)
    if not (m.shape == f.shape == u.shape) or m.ndim != 1:
        raise DomainError("psi needs three equally long 1-D arrays")
    if m.size < 2:
        raise DomainError("psi needs at least two clients")
    gains = m - f
    worst = int(np.argmax(u))  # first index on ties
    others = np.delete(gains, worst)
    return float(gains[worst] - others.mean())


def pearson(upsilons, accs) -> float:
    u = np.asarray(upsilons, dtype=np.float64)
    a = np.asarray(accs, dtype=np.float64)
    if u.shape != a.shape or u.ndim != 1 or u.size < 2:
        raise DomainError("pearson needs two equally long arrays of length >= 2")
    du = u - u.mean()
    da = a - a.mean()
    su = np.sqrt(du @ du)
    sa = np.sqrt(da @ da)
    if su == 0.0 or sa == 0.0:
        raise DegenerateInputError("pearson undefined: zero variance")
    return float(np.clip((du @ da) / (su * sa), -1.0, 1.0))


@dataclass
class MetricsReport:
    preset: str
    global_acc: float
    client_accs: list[float]
    upsilons: list[float]
    client_std: float
    psi: float | None = None
    pearson: float | None = None
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def acc_max_upsilon(self) -> float:
        return self.client_accs[int(np.argmax(self.upsilons))]

    @property
    def acc_min_upsilon(self) -> float:
        return self.client_accs[int(np.argmin(self.upsilons))]

    def as_percent(self) -> dict:
        """Report row with accuracies, STD and psi in percentage points."""
        pct = lambda x: None if x is None else 100.0 * x  # noqa: E731
        return {
            "preset": self.preset,
            "global_acc": pct(self.global_acc),
            "acc_max_upsilon": pct(self.acc_max_upsilon),
            "acc_min_upsilon": pct(self.acc_min_upsilon),
            "std": pct(self.client_std),
            "psi": pct(self.psi),
            "pearson": self.pearson,
        }

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(model: ModelParams, clients, global_test: Batch, upsilons,
                 fedavg_ref=None, preset: str = "") -> MetricsReport:
    """Evaluate ``model`` on every client's test split and the global test set.

    ``clients`` is any sequence with a ``test`` batch per item.  ``psi``
    is filled only when ``fedavg_ref`` (FedAvg client accuracies from the
    matching run) is given; ``pearson`` only when both arrays vary.
    """
    accs = [accuracy(model, c.test) for c in clients]
    ups = [float(u) for u in upsilons]
    report = MetricsReport(
        preset=preset,
        global_acc=accuracy(model, global_test),
        client_accs=accs,
        upsilons=ups,
        client_std=client_std(accs),
    )
    if fedavg_ref is None:
        report.notes["psi"] = "no FedAvg reference"
    else:
        report.psi = psi(accs, fedavg_ref, ups)
    try:
        report.pearson = pearson(ups, accs)
    except DegenerateInputError as exc:
        report.notes["pearson"] = str(exc)
    return report
