"""Per-slot settlement ledger: peers trade with each other before the main grid.

Settlement is bookkeeping only. Every counterparty pays the main-grid price
of the slot, so rewards do not change with or without it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

MAIN_GRID = "maingrid"

Party = Union[int, str]


@dataclass(frozen=True)
class Flow:
    seller: Party
    buyer: Party
    units: int


@dataclass
class SettlementRecord:
    slot: int
    price: float
    flows: list[Flow] = field(default_factory=list)
    day: int = 0

    def net(self, party: Party) -> int:
        """Units sold minus units bought by ``party``."""
        out = sum(f.units for f in self.flows if f.seller == party)
        inc = sum(f.units for f in self.flows if f.buyer == party)
        return out - inc

    @property
    def peer_units(self) -> int:
        return sum(f.units for f in self.flows if MAIN_GRID not in (f.seller, f.buyer))

    @property
    def main_grid_absorbed(self) -> int:
        return sum(f.units for f in self.flows if f.buyer == MAIN_GRID)

    @property
    def main_grid_supplied(self) -> int:
        return sum(f.units for f in self.flows if f.seller == MAIN_GRID)


def largest_remainder(weights: Mapping[Party, int], total: int) -> dict[Party, int]:
    """Split ``total`` proportionally to integer weights; leftover units go to the
    largest remainders, ties to the smaller key."""
    W = sum(weights.values())
    if W == 0:
        return {k: 0 for k in weights}
    base = {k: w * total // W for k, w in weights.items()}
    rem = {k: w * total % W for k, w in weights.items()}
    left = total - sum(base.values())
    for k in sorted(weights, key=lambda k: (-rem[k], str(k)))[:left]:
        base[k] += 1
    return base


def _round_matrix(rows: dict[Party, int], cols: dict[Party, int], total: int) -> dict[tuple, int]:
    """Integer flows with the given margins, close to rows[i] * cols[j] / total."""
    cells = {}
    rem = {}
    for i, a in rows.items():
        for j, b in cols.items():
            cells[i, j] = a * b // total
            rem[i, j] = a * b % total
    row_left = {i: a - sum(cells[i, j] for j in cols) for i, a in rows.items()}
    col_left = {j: b - sum(cells[i, j] for i in rows) for j, b in cols.items()}
    for i, j in sorted(cells, key=lambda c: (-rem[c], str(c[0]), str(c[1]))):
        if row_left[i] > 0 and col_left[j] > 0:
            cells[i, j] += 1
            row_left[i] -= 1
            col_left[j] -= 1
    # margins always balance, so this only mops up leftovers the greedy pass skipped
    for i in sorted(rows, key=str):
        for j in sorted(cols, key=str):
            k = min(row_left[i], col_left[j])
            if k > 0:
                cells[i, j] += k
                row_left[i] -= k
                col_left[j] -= k
    return cells


def settle(trades: Mapping[Party, int] | list[int], slot: int, price: float, day: int = 0) -> SettlementRecord:
    """Match peer sellers to peer buyers proportionally; the rest goes to the main grid.

    ``trades`` maps each microgrid to its net trade u + v (positive sells).
    """
    if not isinstance(trades, Mapping):
        trades = dict(enumerate(trades))
    sellers = {k: int(t) for k, t in trades.items() if t > 0}
    buyers = {k: -int(t) for k, t in trades.items() if t < 0}
    volume = min(sum(sellers.values()), sum(buyers.values()))

    flows: list[Flow] = []
    sold = largest_remainder(sellers, volume)
    bought = largest_remainder(buyers, volume)
    if volume > 0:
        cells = _round_matrix(sold, bought, volume)
        for (i, j), units in sorted(cells.items(), key=lambda c: (str(c[0][0]), str(c[0][1]))):
            if units:
                flows.append(Flow(i, j, units))
    for i in sorted(sellers, key=str):
        if sellers[i] > sold[i]:
            flows.append(Flow(i, MAIN_GRID, sellers[i] - sold[i]))
    for j in sorted(buyers, key=str):
        if buyers[j] > bought[j]:
            flows.append(Flow(MAIN_GRID, j, buyers[j] - bought[j]))
    return SettlementRecord(slot, price, flows, day)
