from dataclasses import dataclass


@dataclass(frozen=True)
class UpdateGate:
    min_sources: int = 3  # visible satellites + ranging reference stations

    def allows(self, visible_sats: int, visible_anchors: int) -> bool:
        if visible_sats < 0 or visible_anchors < 0:
            raise ValueError("source counts must be >= 0")
        return visible_sats + visible_anchors >= self.min_sources


@dataclass(frozen=True)
class IterationPolicy:
    max_iter: int = 10
    tol: float = 1e-4  # m, on the position part of the step

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


def gate_update(visible_sats: int, visible_anchors: int, gate: UpdateGate = UpdateGate()) -> bool:
    return gate.allows(visible_sats, visible_anchors)
