import json
import logging
import os
from typing import Tuple

import numpy as np

from semiclassic_lab.physics.classical import ParticleEnsemble
from semiclassic_lab.physics.grid import PhaseField, PhaseLattice, SpaceGrid
from semiclassic_lab.physics.states import MixedState
from semiclassic_lab.utils.hashing import array_digest

HEADER_SUFFIX = ".json"
PAYLOAD_SUFFIX = ".bin"


def _write(path: str, header: dict, payload: np.ndarray) -> str:
    payload = np.ascontiguousarray(payload)
    header = {**header, "dtype": payload.dtype.str, "shape": list(payload.shape), "sha256": array_digest(payload)}
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path + PAYLOAD_SUFFIX, "wb") as f:
        f.write(payload.tobytes())
    with open(path + HEADER_SUFFIX, "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)
    logging.info(f"Snapshot written to {path}{PAYLOAD_SUFFIX}")
    return path + PAYLOAD_SUFFIX


def _read(path: str) -> Tuple[dict, np.ndarray]:
    with open(path + HEADER_SUFFIX, "r") as f:
        header = json.load(f)
    with open(path + PAYLOAD_SUFFIX, "rb") as f:
        payload = np.frombuffer(f.read(), dtype=np.dtype(header["dtype"])).reshape(header["shape"])
    if array_digest(payload) != header["sha256"]:
        raise ValueError(f"snapshot {path} does not match its recorded digest")
    return header, payload


def save_field(field: PhaseField, path: str) -> str:
    """Write a phase-space field as a row-major payload plus a JSON header.

    Args:
        field: The field to write
        path: Path without suffix; `.bin` and `.json` are appended

    Returns:
        Path to the payload file
    """
    header = {
        "kind": "phase_field",
        "tag": field.tag,
        "eps": field.eps,
        "mass": field.mass,
        "axes": [a.tolist() for a in field.lattice.x_axes + field.lattice.p_axes],
        "metadata": {k: v for k, v in field.metadata.items() if isinstance(v, (int, float, str, bool))},
    }
    return _write(path, header, np.asarray(field.values))


def load_field(path: str) -> PhaseField:
    header, values = _read(path)
    axes = [np.asarray(a) for a in header["axes"]]
    n = len(axes) // 2
    lattice = PhaseLattice(tuple(axes[:n]), tuple(axes[n:]))
    return PhaseField(lattice, values.copy(), header["tag"], header["eps"], header["mass"], header["metadata"])


def save_state(state: MixedState, path: str) -> str:
    """Write a mixed state: the eigenfunctions as payload, weights and grid in the header."""
    header = {
        "kind": "mixed_state",
        "grid": state.grid.describe(),
        "eps": state.eps,
        "weights": [float(w) for w in state.weights],
        "truncated_weight": state.truncated_weight,
        "label": state.label,
    }
    return _write(path, header, state.modes.astype(complex))


def load_state(path: str) -> MixedState:
    header, modes = _read(path)
    g = header["grid"]
    grid = SpaceGrid(g["dim"], g["halfwidth"], g["points"])
    return MixedState(grid, header["eps"], np.asarray(header["weights"]), modes.copy(),
                      header["truncated_weight"], header["label"])


def save_ensemble(ensemble: ParticleEnsemble, path: str, **manifest) -> str:
    """Write particles as (x, p, w) rows; `manifest` adds run parameters such as delta and h."""
    payload = np.concatenate([ensemble.x, ensemble.p, ensemble.weights[:, None]], axis=1)
    header = {
        "kind": "particle_ensemble",
        **ensemble.describe(),
        "frozen": np.nonzero(ensemble.frozen)[0].tolist(),
        **manifest,
    }
    return _write(path, header, payload)


def load_ensemble(path: str) -> ParticleEnsemble:
    header, rows = _read(path)
    n = header["dim"]
    frozen = np.zeros(rows.shape[0], dtype=bool)
    frozen[header["frozen"]] = True
    return ParticleEnsemble(rows[:, :n].copy(), rows[:, n:2 * n].copy(), rows[:, 2 * n].copy(), header["t"],
                            header["seed"], header["source"], frozen)
