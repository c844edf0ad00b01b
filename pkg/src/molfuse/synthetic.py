"""Deterministic synthetic corpus in the QM9 distribution layout.

Real QM9 is a ~134k-file download; desk-scale tests and experiments instead
use generated records that are layout-identical and keep the dataset's
structural facts intact: gap is exactly lumo - homo, u298 exceeds u0,
electronic targets are smooth functions of composition and geometry (so a
geometry encoder can actually learn them), and every value is finite in
native units. Generation is pure in (seed, index).
"""

from __future__ import annotations

import numpy as np

from .pubchem import TextDescriptors
from .qm9 import Molecule, TargetId, serialize_xyz

ATOMIC_MASS = {"H": 1.008, "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998}
ELECTRONEGATIVITY = {"H": 2.20, "C": 2.55, "N": 3.04, "O": 3.44, "F": 3.98}
ATOMIC_NUMBER = {"H": 1, "C": 6, "N": 7, "O": 8, "F": 9}
ATOM_ENERGY_HARTREE = {"H": -0.500, "C": -37.84, "N": -54.58, "O": -75.06, "F": -99.72}
ATOM_POLARIZABILITY = {"H": 0.667, "C": 1.76, "N": 1.10, "O": 0.80, "F": 0.56}

ANGSTROM_TO_BOHR = 1.8897259886
DEBYE_PER_E_ANGSTROM = 4.80320

_ELEMENT_CHOICES = ("H", "C", "N", "O", "F")
_ELEMENT_WEIGHTS = (0.50, 0.25, 0.10, 0.10, 0.05)


def _random_geometry(rng: np.random.Generator, n_atoms: int) -> np.ndarray:
    """Connected random cluster: each new atom bonds to a previous one at
    1.0-1.6 Angstrom, rejecting placements closer than 0.85 to any atom."""
    coords = np.zeros((n_atoms, 3), dtype=np.float64)
    for i in range(1, n_atoms):
        while True:
            anchor = coords[int(rng.integers(0, i))]
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            candidate = anchor + direction * rng.uniform(1.0, 1.6)
            if np.min(np.linalg.norm(coords[:i] - candidate, axis=1)) >= 0.85:
                coords[i] = candidate
                break
    return coords


def _pseudo_charges(elements, noise=None) -> np.ndarray:
    elec = np.array([ELECTRONEGATIVITY[e] for e in elements])
    q = 0.3 * (elec.mean() - elec)
    if noise is not None:
        q = q + noise
    return q


def synthetic_targets(elements, coords: np.ndarray, rng: np.random.Generator) -> dict:
    """All 15 properties as smooth functions of composition and geometry,
    plus ~1%-scale noise on the unconstrained ones."""
    n = len(elements)
    counts = {e: elements.count(e) if isinstance(elements, list) else sum(1 for x in elements if x == e)
              for e in _ELEMENT_CHOICES}
    frac = {e: counts[e] / n for e in _ELEMENT_CHOICES}
    masses = np.array([ATOMIC_MASS[e] for e in elements])
    z = np.array([ATOMIC_NUMBER[e] for e in elements], dtype=np.float64)

    center = coords.mean(axis=0)
    rel = coords - center
    rg2 = float((rel * rel).sum(axis=1).mean())

    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(n, k=1)
    pair_d = dist[iu]
    dbar = float(pair_d.mean()) if pair_d.size else 1.0
    # Coulomb-matrix-style invariant scalar, normalized to O(1).
    coul = float((z[iu[0]] * z[iu[1]] / pair_d).sum()) / max(1.0, n * n) if pair_d.size else 0.0

    q = _pseudo_charges(list(elements))
    mu_vec = (q[:, None] * coords).sum(axis=0)  # sum(q) == 0, so origin-free
    mu = DEBYE_PER_E_ANGSTROM * float(np.linalg.norm(mu_vec))

    zc = (z[:, None] * coords).sum(axis=0) / z.sum()
    r2 = float((z * ((coords - zc) ** 2).sum(axis=1)).sum()) * ANGSTROM_TO_BOHR**2

    # Principal moments of inertia -> rotational constants (GHz-ish scale).
    mc = (masses[:, None] * coords).sum(axis=0) / masses.sum()
    d = coords - mc
    inertia = np.einsum("i,ij,ik->jk", masses, d, d)
    inertia = np.trace(inertia) * np.eye(3) - inertia
    moments = np.sort(np.abs(np.linalg.eigvalsh(inertia)))
    rot = 505.379 / (moments + 0.5)

    homo = (
        -0.240
        + 0.050 * np.tanh(1.5 * (coul - 0.8))
        - 0.030 * frac["O"]
        - 0.015 * frac["N"]
        + 0.020 * np.tanh(rg2 / 3.0 - 1.0)
        + 0.0005 * rng.normal()
    )
    gap = (
        0.22
        + 0.08 * np.tanh(2.0 - dbar / 2.0)
        + 0.04 * frac["F"]
        + 0.02 * frac["H"]
        + 0.0005 * rng.normal()
    )
    gap = max(gap, 0.02)
    lumo = homo + gap  # exact by construction

    alpha = sum(ATOM_POLARIZABILITY[e] for e in elements) * 4.0 + 1.5 * rg2 + 0.05 * rng.normal()
    zpve = 0.0090 * counts["H"] + 0.0040 * (n - counts["H"]) + 0.0002 * rng.normal()
    zpve = max(zpve, 1e-4)
    u0 = sum(ATOM_ENERGY_HARTREE[e] for e in elements) - 0.15 * np.tanh(coul) - 0.01 * n + 0.001 * rng.normal()
    thermal = 0.0029 + 0.0009 * n  # strictly positive, so u298 > u0
    u298 = u0 + thermal
    h298 = u298 + 0.000944
    g298 = h298 - 0.010 - 0.0020 * n
    cv = 2.0 + 0.75 * n + 0.9 * counts["H"] + 0.01 * rng.normal()

    return {
        TargetId.A: float(rot[0]),
        TargetId.B: float(rot[1]),
        TargetId.C: float(rot[2]),
        TargetId.MU: float(mu),
        TargetId.ALPHA: float(alpha),
        TargetId.HOMO: float(homo),
        TargetId.LUMO: float(lumo),
        TargetId.GAP: float(gap),
        TargetId.R2: float(r2),
        TargetId.ZPVE: float(zpve),
        TargetId.U0: float(u0),
        TargetId.U298: float(u298),
        TargetId.H298: float(h298),
        TargetId.G298: float(g298),
        TargetId.CV: float(cv),
    }


def _hill_formula(elements) -> str:
    counts = {}
    for e in elements:
        counts[e] = counts.get(e, 0) + 1
    ordered = []
    for e in ("C", "H"):
        if e in counts:
            ordered.append((e, counts.pop(e)))
    ordered.extend(sorted(counts.items()))
    return "".join(f"{e}{c if c > 1 else ''}" for e, c in ordered)


def synthetic_molecule(seed: int, index: int, min_atoms: int = 3, max_atoms: int = 12) -> Molecule:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))
    n_atoms = int(rng.integers(min_atoms, max_atoms + 1))
    elements = ["C"] + list(rng.choice(_ELEMENT_CHOICES, size=n_atoms - 1, p=_ELEMENT_WEIGHTS))
    coords = _random_geometry(rng, n_atoms)
    targets = synthetic_targets(elements, coords, rng)
    charges = _pseudo_charges(elements, noise=0.005 * rng.normal(size=n_atoms))

    formula = _hill_formula(elements)
    mol_id = str(index + 1)
    n_modes = max(1, 3 * n_atoms - 6)
    freqs = np.sort(rng.uniform(450.0, 3400.0, size=n_modes))
    inchi = f"InChI=1S/{formula}/syn{mol_id}"
    smiles = f"SYN{mol_id}"
    return Molecule(
        id=mol_id,
        elements=tuple(elements),
        coords=coords,
        targets=targets,
        partial_charges=charges,
        frequencies_raw="\t".join(f"{f:.4f}" for f in freqs),
        smiles_raw=f"{smiles}\t{smiles}",
        inchi_raw=f"{inchi}\t{inchi}",
    )


def synthetic_corpus(n: int, seed: int = 0, min_atoms: int = 3, max_atoms: int = 12):
    return [synthetic_molecule(seed, i, min_atoms, max_atoms) for i in range(n)]


def write_corpus(xyz_dir, molecules) -> None:
    """Materialize molecules as one .xyz file each, distribution layout."""
    from pathlib import Path

    out = Path(xyz_dir)
    out.mkdir(parents=True, exist_ok=True)
    for m in molecules:
        (out / f"synth_{int(m.id):06d}.xyz").write_text(serialize_xyz(m), encoding="utf-8")


def leak_dataset(n: int, seed: int = 0, noise: float = 0.01):
    """Text-utility oracle dataset: targets are pure noise with respect to
    geometry, and one descriptor field (XLogP) equals the target plus
    `noise`-scale perturbation. Every other descriptor field is constant, so
    the text modality carries exactly one informative coordinate that
    geometry cannot encode.

    Returns (molecule, descriptors) pairs with the leak written into the
    HOMO slot of each molecule's target table.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xEA,)))
    molecules = synthetic_corpus(n, seed=seed)
    ys = rng.normal(0.0, 1.0, size=n)
    pairs = []
    for i, (m, y) in enumerate(zip(molecules, ys)):
        m.targets[TargetId.HOMO] = float(y)
        m.targets[TargetId.LUMO] = float(y + m.targets[TargetId.GAP])
        descriptors = TextDescriptors(
            cid=i + 1,
            iupac_name="leak probe",
            molecular_formula="CH4",
            molecular_weight=16.043,
            xlogp=float(y + noise * rng.normal()),
            hbond_donors=0,
            hbond_acceptors=0,
            rotatable_bonds=0,
            tpsa=0.0,
            formal_charge=0,
            synonyms=["leak probe"],
            fetched_at="1970-01-01T00:00:00Z",
            source_url="synthetic://leak",
        )
        pairs.append((m, descriptors))
    return pairs


def synthetic_descriptors(m: Molecule, cid: int | None = None) -> TextDescriptors:
    """PubChem-shaped descriptors derived deterministically from the record,
    for fully offline multimodal runs."""
    counts = {e: sum(1 for x in m.elements if x == e) for e in _ELEMENT_CHOICES}
    mw = sum(ATOMIC_MASS[e] for e in m.elements)
    xlogp = 0.4 * counts["C"] - 0.6 * counts["O"] - 0.4 * counts["N"] - 0.2 * counts["F"] + 0.05 * counts["H"]
    donors = counts["O"] + counts["N"]
    acceptors = counts["O"] + counts["N"] + counts["F"]
    tpsa = 18.0 * counts["O"] + 12.0 * counts["N"]
    formula = _hill_formula(list(m.elements))
    name = f"synthomolecule-{m.id}"
    return TextDescriptors(
        cid=cid if cid is not None else int(m.id),
        iupac_name=name,
        molecular_formula=formula,
        molecular_weight=round(mw, 3),
        xlogp=round(xlogp, 2),
        hbond_donors=donors,
        hbond_acceptors=acceptors,
        rotatable_bonds=max(0, m.n_atoms - 4),
        tpsa=tpsa,
        formal_charge=0,
        synonyms=[name, f"SYN{m.id}", formula],
        fetched_at="1970-01-01T00:00:00Z",
        source_url=f"synthetic://descriptors/{m.id}",
    )
