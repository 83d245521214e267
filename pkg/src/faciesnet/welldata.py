"""Well-log ingestion: CSV parsing, per-channel standardization, labeled
depth-window extraction, and train/blind splitting by whole wells."""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataFormatError, MissingLabelsError, ShapeError

# Canonical channel order; every window is a (7, W) block in this order.
CHANNELS = ("GR", "ILD_log10", "DeltaPHI", "PHIND", "PE", "NM_M", "RELPOS")

N_FACIES = 9
FACIES_CODES = ("SS", "CSiS", "FSiS", "SiSh", "MS", "WS", "D", "PS", "BS")
FACIES_NAMES = (
    "Nonmarine sandstone",
    "Nonmarine coarse siltstone",
    "Nonmarine fine siltstone",
    "Marine siltstone and shale",
    "Mudstone",
    "Wackestone",
    "Dolomite",
    "Packstone-grainstone",
    "Phylloid-algal bafflestone",
)

_REQUIRED_COLUMNS = ("Well Name", "Depth") + CHANNELS


@dataclass(frozen=True)
class FaciesTable:
    """The 9 facies classes and which pairs count as geological neighbours."""

    codes: tuple = FACIES_CODES
    names: tuple = FACIES_NAMES
    adjacency: dict = field(default_factory=lambda: default_adjacency())

    def __post_init__(self):
        if len(self.codes) != N_FACIES or len(self.names) != N_FACIES:
            raise ConfigError(f"facies table must have exactly {N_FACIES} entries")
        for f, neighbours in self.adjacency.items():
            if f in neighbours:
                raise ConfigError(f"facies {f} listed adjacent to itself")
            for g in neighbours:
                if not 1 <= g <= N_FACIES:
                    raise ConfigError(f"adjacency references unknown facies {g}")
                if f not in self.adjacency.get(g, set()):
                    raise ConfigError(f"adjacency not symmetric: {f}->{g} but not {g}->{f}")

    def code(self, facies_id: int) -> str:
        return self.codes[facies_id - 1]


def default_adjacency() -> dict:
    """Plus/minus one neighbour in the ordered facies list.

    A stand-in: the true geological map depends on the basin and should
    be supplied with an adjacency file when known.
    """
    adj = {}
    for f in range(1, N_FACIES + 1):
        adj[f] = set(g for g in (f - 1, f + 1) if 1 <= g <= N_FACIES)
    return adj


def load_adjacency(path) -> dict:
    """Read an adjacency map from lines like ``WS: MS, D, PS`` (codes or ids)."""
    code_to_id = {c.upper(): i + 1 for i, c in enumerate(FACIES_CODES)}

    def to_id(token, line_no):
        token = token.strip()
        if token.upper() in code_to_id:
            return code_to_id[token.upper()]
        try:
            f = int(token)
        except ValueError:
            raise DataFormatError(f"adjacency line {line_no}: unknown facies {token!r}")
        if not 1 <= f <= N_FACIES:
            raise DataFormatError(f"adjacency line {line_no}: facies id {f} out of range")
        return f

    adj = {f: set() for f in range(1, N_FACIES + 1)}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise DataFormatError(f"adjacency line {line_no}: expected 'facies: neighbours'")
            left, right = line.split(":", 1)
            f = to_id(left, line_no)
            ids = [to_id(t, line_no) for t in right.split(",") if t.strip()]
            adj[f].update(ids)
    table = FaciesTable(adjacency=adj)  # validates symmetry / self-adjacency
    return table.adjacency


@dataclass
class Well:
    """One well: depth-sorted log channels plus optional facies labels."""

    name: str
    depth: np.ndarray
    channels: dict                       # channel name -> float64 vector
    labels: Optional[np.ndarray] = None  # facies ids 1..9, or None
    formation: Optional[list] = None     # carried as metadata, not a feature

    def __post_init__(self):
        n = len(self.depth)
        for ch, values in self.channels.items():
            if len(values) != n:
                raise DataFormatError(f"well {self.name}: channel {ch} has {len(values)} "
                                      f"values for {n} depths")
        if self.labels is not None:
            if len(self.labels) != n:
                raise DataFormatError(f"well {self.name}: {len(self.labels)} labels "
                                      f"for {n} depths")
            if self.labels.min() < 1 or self.labels.max() > N_FACIES:
                raise DataFormatError(f"well {self.name}: facies labels outside 1..{N_FACIES}")
        if n > 1 and not np.all(np.diff(self.depth) > 0):
            raise DataFormatError(f"well {self.name}: depth not strictly increasing")

    def __len__(self) -> int:
        return len(self.depth)

    def channel_matrix(self) -> np.ndarray:
        """Channels stacked in canonical order: shape (7, n_samples)."""
        return np.stack([self.channels[c] for c in CHANNELS])


def parse_csv(path, allow_missing_pe: bool = False) -> list:
    """Read wells from the contest-layout CSV.

    Header: Facies,Formation,Well Name,Depth,GR,ILD_log10,DeltaPHI,PHIND,
    PE,NM_M,RELPOS. Facies and Formation are optional. Rows are grouped
    by well name and depth-sorted; empty numeric cells become NaN gaps.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file")
        header = [h.strip() for h in header]
        col = {name: i for i, name in enumerate(header)}

        for name in _REQUIRED_COLUMNS:
            if name in col:
                continue
            if name == "PE" and allow_missing_pe:
                continue
            raise DataFormatError(f"{path}: missing required column {name!r}")
        has_facies = "Facies" in col
        has_formation = "Formation" in col

        rows = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            well_name = row[col["Well Name"]].strip()
            rec = rows.setdefault(well_name, {"depth": [], "facies": [], "formation": [],
                                              **{c: [] for c in CHANNELS}})

            def cell(name):
                idx = col.get(name)
                return row[idx].strip() if idx is not None and idx < len(row) else ""

            def numeric(name, text):
                if text == "":
                    return np.nan
                try:
                    return float(text)
                except ValueError:
                    raise DataFormatError(f"{path}: row {row_no}: non-numeric "
                                          f"{name} value {text!r}")

            depth = numeric("Depth", cell("Depth"))
            if np.isnan(depth):
                raise DataFormatError(f"{path}: row {row_no}: missing Depth")
            rec["depth"].append(depth)
            for c in CHANNELS:
                rec[c].append(numeric(c, cell(c)))
            rec["facies"].append(cell("Facies") if has_facies else "")
            rec["formation"].append(cell("Formation") if has_formation else "")

    wells = []
    for name, rec in rows.items():
        order = np.argsort(np.array(rec["depth"]), kind="stable")
        depth = np.array(rec["depth"])[order]
        channels = {c: np.array(rec[c])[order] for c in CHANNELS}

        facies_cells = [rec["facies"][i] for i in order]
        if has_facies and all(f != "" for f in facies_cells):
            try:
                labels = np.array([int(float(f)) for f in facies_cells])
            except ValueError:
                raise DataFormatError(f"{path}: well {name}: non-numeric Facies value")
        elif has_facies and any(f != "" for f in facies_cells):
            raise DataFormatError(f"{path}: well {name}: partially labeled (some Facies "
                                  f"cells empty)")
        else:
            labels = None
        formation = [rec["formation"][i] for i in order] if has_formation else None
        wells.append(Well(name, depth, channels, labels, formation))
    return wells


def write_csv(wells: list, path) -> None:
    """Serialize wells back to the same schema (repr floats round-trip exactly)."""
    labeled = any(w.labels is not None for w in wells)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = (["Facies"] if labeled else []) + ["Formation", "Well Name", "Depth"]
        writer.writerow(header + list(CHANNELS))
        for well in wells:
            for i in range(len(well)):
                row = []
                if labeled:
                    row.append("" if well.labels is None else str(int(well.labels[i])))
                row.append(well.formation[i] if well.formation else "")
                row.append(well.name)
                row.append(repr(float(well.depth[i])))
                for c in CHANNELS:
                    v = well.channels[c][i]
                    row.append("" if np.isnan(v) else repr(float(v)))
                writer.writerow(row)


@dataclass
class Standardizer:
    """Per-channel mean/std fitted on training wells only."""

    mean: dict
    std: dict

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for c in CHANNELS:
                fh.write(f"{c} {self.mean[c]!r} {self.std[c]!r}\n")

    @classmethod
    def load(cls, path) -> "Standardizer":
        mean, std = {}, {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) != 3:
                    raise DataFormatError(f"{path}: bad standardizer line {line!r}")
                mean[parts[0]] = float(parts[1])
                std[parts[0]] = float(parts[2])
        missing = [c for c in CHANNELS if c not in mean]
        if missing:
            raise DataFormatError(f"{path}: standardizer missing channels {missing}")
        return cls(mean, std)


def fit_standardizer(wells: list) -> Standardizer:
    """Population mean/std per channel over all samples of the given wells.

    Gap cells (NaN) are excluded. Channels with std below 1e-8 get
    std = 1 so a degenerate log never divides by zero.
    """
    if not wells:
        raise ConfigError("cannot fit a standardizer on zero wells")
    mean, std = {}, {}
    for c in CHANNELS:
        values = np.concatenate([w.channels[c] for w in wells])
        values = values[~np.isnan(values)]
        if values.size == 0:
            mean[c], std[c] = 0.0, 1.0
            continue
        mean[c] = float(values.mean())
        s = float(values.std())  # population, not sample: fit-then-apply is exact
        std[c] = s if s >= 1e-8 else 1.0
    return Standardizer(mean, std)


def apply_standardizer(standardizer: Standardizer, well: Well) -> Well:
    """Return a copy of the well with (x - mean) / std channels; labels untouched."""
    for c in well.channels:
        if c not in standardizer.mean:
            raise ShapeError(f"standardizer has no statistics for channel {c!r}")
    channels = {c: (well.channels[c] - standardizer.mean[c]) / standardizer.std[c]
                for c in well.channels}
    return Well(well.name, well.depth.copy(), channels,
                None if well.labels is None else well.labels.copy(),
                list(well.formation) if well.formation else None)


def impute_pe(wells: list, pe_mean: float) -> list:
    """Fill PE gaps with the supplied training-set mean (``--allow-missing-pe``)."""
    out = []
    for w in wells:
        pe = w.channels["PE"]
        if np.any(np.isnan(pe)):
            channels = dict(w.channels)
            channels["PE"] = np.where(np.isnan(pe), pe_mean, pe)
            w = Well(w.name, w.depth, channels, w.labels, w.formation)
        out.append(w)
    return out


@dataclass
class WindowSet:
    """Labeled depth-windows ready for training: one example per labeled sample."""

    windows: np.ndarray       # (n, 7, W) float32
    labels: np.ndarray        # (n,) facies ids 1..9
    well_names: list
    center_depths: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def window_matrix(well: Well, width: int, dtype=np.float32) -> np.ndarray:
    """Centered windows for every sample: (n_samples, 7, width).

    Boundary windows replicate the well's edge samples, so no window
    ever borrows data from another well.
    """
    if width < 1 or width % 2 == 0:
        raise ConfigError(f"window length must be odd and >= 1, got {width}")
    logs = well.channel_matrix()
    if np.any(np.isnan(logs)):
        bad = [c for c in CHANNELS if np.any(np.isnan(well.channels[c]))]
        raise DataFormatError(f"well {well.name}: gaps remain in {bad}; "
                              f"impute before windowing")
    half = width // 2
    padded = np.pad(logs, ((0, 0), (half, half)), mode="edge")
    # sliding view (7, n, width) -> one window per original sample
    view = np.lib.stride_tricks.sliding_window_view(padded, width, axis=1)
    return np.ascontiguousarray(view.transpose(1, 0, 2), dtype=dtype)


def extract_windows(well: Well, width: int, dtype=np.float32) -> WindowSet:
    """One labeled example per sample, window centered on that sample."""
    if well.labels is None:
        raise MissingLabelsError(f"well {well.name} has no facies labels; "
                                 f"use the prediction path for unlabeled wells")
    return WindowSet(window_matrix(well, width, dtype), well.labels.copy(),
                     [well.name] * len(well), well.depth.copy())


def merge_window_sets(sets: list) -> WindowSet:
    """Concatenate window sets from several wells."""
    if not sets:
        raise ConfigError("no window sets to merge")
    return WindowSet(
        np.concatenate([s.windows for s in sets]),
        np.concatenate([s.labels for s in sets]),
        sum((s.well_names for s in sets), []),
        np.concatenate([s.center_depths for s in sets]),
    )


def split_by_well(wells: list, blind_names: list) -> tuple[list, list]:
    """Partition wells by identity into (train, blind); never by row."""
    if len(set(blind_names)) != len(blind_names):
        raise ConfigError(f"duplicate blind well name in {blind_names}")
    known = {w.name for w in wells}
    unknown = [n for n in blind_names if n not in known]
    if unknown:
        raise ConfigError(f"blind wells not in data: {unknown}")
    blind_set = set(blind_names)
    train = [w for w in wells if w.name not in blind_set]
    blind = [w for w in wells if w.name in blind_set]
    return train, blind


def facies_counts(wells: list) -> dict:
    """Histogram of facies labels over all labeled samples: {facies id: count}."""
    counts = {f: 0 for f in range(1, N_FACIES + 1)}
    for w in wells:
        if w.labels is None:
            continue
        ids, n = np.unique(w.labels, return_counts=True)
        for f, c in zip(ids, n):
            counts[int(f)] += int(c)
    return counts
