"""
Artifact persistence: PSFLOW1 field snapshots, prototype store index,
CSV ledgers and JSON reports. Every write goes through a temporary file
that is moved into place once complete.
"""
import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Tuple, Union

import numpy as np

from numerics.core_types import (
    Field,
    FlowParams,
    Grid,
    LedgerRow,
    Snapshot,
    SnapshotStore,
    make_grid,
    make_params,
)
from numerics.exceptions import DataIntegrityError

logger = logging.getLogger(__name__)

MAGIC = "PSFLOW1"
PathLike = Union[str, Path]


def _atomic_write(path: Path, payload: bytes):
    """Write to a temporary sibling first, then move it into place"""
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(temp_path, "wb") as f:
            f.write(payload)
        temp_path.replace(path)
        logger.debug(f"Wrote {path}")
    except Exception as e:
        logger.error(f"Failed to write {path}: {str(e)}")
        if temp_path.exists():
            temp_path.unlink()
        raise


def fmt(x: Any) -> str:
    """17-significant-digit round-trip formatting for floats"""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_snapshot(path: PathLike, field: Field):
    """Header `PSFLOW1 <mode> <points...> <extent...>` then little-endian float64, row-major"""
    grid = field.grid
    tokens = [MAGIC, grid.mode.value]
    if grid.radial_dim is not None:
        tokens[1] = f"{grid.mode.value}:{grid.radial_dim}"
    tokens += [str(n) for n in grid.points] + [fmt(e) for e in grid.extent]
    header = (" ".join(tokens) + "\n").encode("ascii")
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")
    _atomic_write(Path(path), header + payload)


def read_snapshot(path: PathLike) -> Field:
    """
    Read a PSFLOW1 snapshot

    Raises:
        DataIntegrityError: On a bad header or a truncated payload
    """
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise DataIntegrityError(f"{path}: missing PSFLOW1 header line")
    tokens = raw[:newline].decode("ascii", errors="replace").split()
    if not tokens or tokens[0] != MAGIC:
        raise DataIntegrityError(f"{path}: not a PSFLOW1 snapshot")
    mode, _, dim = tokens[1].partition(":")
    axes = 2 if mode == "cartesian_2d" else 1
    if len(tokens) != 2 + 2 * axes:
        raise DataIntegrityError(f"{path}: malformed header {tokens}")
    points = [int(x) for x in tokens[2:2 + axes]]
    extent = [float(x) for x in tokens[2 + axes:]]
    grid = make_grid(mode, extent, points, radial_dim=int(dim) if dim else None)
    data = raw[newline + 1:]
    if len(data) != 8 * grid.size:
        raise DataIntegrityError(
            f"{path}: expected {8 * grid.size} payload bytes, found {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f8").astype(float).reshape(grid.shape)
    return Field(grid, values)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    _atomic_write(Path(path), buffer.getvalue().encode("utf-8"))


def read_csv(path: PathLike) -> Tuple[List[str], np.ndarray]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader if row]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        # JSON has no literal for these; keep them readable and deterministic
        if np.isnan(value):
            return "nan"
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return obj


def write_json(path: PathLike, obj: Any):
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"
    _atomic_write(Path(path), text.encode("utf-8"))


def read_json(path: PathLike) -> Any:
    with open(path) as f:
        return json.load(f)


def save_store(store: SnapshotStore, directory: PathLike) -> List[Path]:
    """
    Persist a prototype store: ledger.csv, snapshots/*.psf and the store.json index

    Returns:
        Paths of the written files
    """
    directory = Path(directory)
    written = []
    ledger_path = directory / "ledger.csv"
    write_csv(ledger_path, LedgerRow.COLUMNS, (row.as_row() for row in store.ledger))
    written.append(ledger_path)
    entries = []
    for k, entry in enumerate(store.entries):
        name = f"snapshots/v_{k:06d}.psf"
        write_snapshot(directory / name, entry.field)
        written.append(directory / name)
        entries.append({"s": entry.s, "gamma": entry.gamma, "grad_energy": entry.grad_energy, "file": name})
    index_path = directory / "store.json"
    write_json(index_path, {
        "params": store.params.describe(),
        "grid": store.grid.describe(),
        "extinction_time": store.extinction_time,
        "extinction_threshold": store.extinction_threshold,
        "violations": store.violations,
        "entries": entries,
    })
    written.append(index_path)
    logger.info(f"Saved prototype store with {len(entries)} snapshots to {directory}")
    return written


def load_store(directory: PathLike) -> SnapshotStore:
    """
    Rebuild a SnapshotStore from save_store output

    Raises:
        DataIntegrityError: On missing or corrupt files
    """
    directory = Path(directory)
    index_path = directory / "store.json"
    if not index_path.exists():
        raise DataIntegrityError(f"{index_path} not found")
    try:
        index = read_json(index_path)
        p = index["params"]
        params = make_params(p["n"], p["p"], newton_tol=p["newton_tol"], quad_tol=p["quad_tol"],
                             extinction_eps=p["extinction_eps"])
        g = index["grid"]
        grid = make_grid(g["mode"], g["extent"], g["points"], radial_dim=g["radial_dim"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataIntegrityError(f"{index_path}: corrupt index ({e})")

    store = SnapshotStore(params, grid)
    for entry in index["entries"]:
        snapshot_path = directory / entry["file"]
        if not snapshot_path.exists():
            raise DataIntegrityError(f"snapshot {snapshot_path} is missing")
        field = read_snapshot(snapshot_path)
        if field.grid != grid:
            raise DataIntegrityError(f"snapshot {snapshot_path} has a different grid")
        store.append(Snapshot(float(entry["s"]), field, float(entry["gamma"]), float(entry["grad_energy"])))

    ledger_path = directory / "ledger.csv"
    if ledger_path.exists():
        header, data = read_csv(ledger_path)
        for values in data:
            row = dict(zip(header, values))
            row["newton_iters"] = int(row["newton_iters"])
            store.record(LedgerRow(**row))
    store.violations = list(index.get("violations", []))
    if index.get("extinction_time") is not None:
        store.mark_extinct(float(index["extinction_time"]), float(index["extinction_threshold"]))
    return store
