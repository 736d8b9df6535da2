"""Target-label functions for the two attack settings.

all_to_all: eta(y) = (y + 1) mod |C| (one-shift, a fixed-point-free
permutation for |C| >= 2). all_to_one: eta(y) = c for a fixed target c.
"""

from dataclasses import dataclass

ALL_TO_ALL = "all_to_all"
ALL_TO_ONE = "all_to_one"


@dataclass(frozen=True)
class LabelMap:
    mode: str
    num_classes: int
    fixed_target: int | None = None

    def __post_init__(self):
        if self.mode not in (ALL_TO_ALL, ALL_TO_ONE):
            raise ValueError(f"unknown label-map mode: {self.mode!r}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.mode == ALL_TO_ONE:
            if self.fixed_target is None:
                raise ValueError("all_to_one requires fixed_target")
            if not 0 <= self.fixed_target < self.num_classes:
                raise ValueError("fixed_target outside class range")
        elif self.fixed_target is not None:
            raise ValueError("fixed_target only valid in all_to_one mode")

    def _check_index(self, y: int, name: str = "y"):
        if not 0 <= y < self.num_classes:
            raise ValueError(f"{name}={y} outside [0, {self.num_classes})")

    def apply(self, y: int) -> int:
        """Target label eta(y) for true label y."""
        self._check_index(y)
        if self.mode == ALL_TO_ALL:
            return (y + 1) % self.num_classes
        return self.fixed_target

    def is_attack_success(self, y_true: int, y_pred: int) -> bool:
        """True iff the prediction on a triggered input equals eta(y_true)."""
        self._check_index(y_true, "y_true")
        self._check_index(y_pred, "y_pred")
        return bool(y_pred == self.apply(y_true))

    def is_trivial(self, y_true: int) -> bool:
        """True when eta(y) == y, i.e. success is trivially satisfiable.

        Only possible in all_to_one mode (the one-shift has no fixed
        points for |C| >= 2); flagged in the manifest so ASR can also be
        reported excluding these samples.
        """
        self._check_index(y_true, "y_true")
        return bool(self.apply(y_true) == y_true)

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "num_classes": self.num_classes}
        if self.fixed_target is not None:
            d["fixed_target"] = self.fixed_target
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LabelMap":
        return cls(
            mode=d["mode"],
            num_classes=int(d["num_classes"]),
            fixed_target=(
                int(d["fixed_target"]) if d.get("fixed_target") is not None else None
            ),
        )
