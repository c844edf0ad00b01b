"""QM9 extended-XYZ ingestion.

Parses the distribution layout into Molecule records (geometry plus all 15
scalar properties in native units), with the dataset's Fortran-style "*^"
exponent notation normalized in the lexer. A matching serializer makes the
parse round-trip testable field for field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

QM9_ELEMENTS = ("H", "C", "N", "O", "F")


class TargetId(Enum):
    """The 15 scalar properties carried by each QM9 record, in native units."""

    A = "A"          # rotational constant, GHz
    B = "B"          # rotational constant, GHz
    C = "C"          # rotational constant, GHz
    MU = "mu"        # dipole moment, Debye
    ALPHA = "alpha"  # isotropic polarizability, Bohr^3
    HOMO = "homo"    # Hartree
    LUMO = "lumo"    # Hartree
    GAP = "gap"      # Hartree
    R2 = "r2"        # electronic spatial extent, Bohr^2
    ZPVE = "zpve"    # Hartree
    U0 = "u0"        # internal energy at 0 K, Hartree
    U298 = "u298"    # internal energy at 298.15 K, Hartree
    H298 = "h298"    # enthalpy at 298.15 K, Hartree
    G298 = "g298"    # free energy at 298.15 K, Hartree
    CV = "cv"        # heat capacity at 298.15 K, cal/(mol K)


# Column order of the property line in the QM9 distribution.
PROPERTY_ORDER = (
    TargetId.A, TargetId.B, TargetId.C, TargetId.MU, TargetId.ALPHA,
    TargetId.HOMO, TargetId.LUMO, TargetId.GAP, TargetId.R2, TargetId.ZPVE,
    TargetId.U0, TargetId.U298, TargetId.H298, TargetId.G298, TargetId.CV,
)

ROTATIONAL_CONSTANTS = (TargetId.A, TargetId.B, TargetId.C)

# The 12 benchmarked properties: rotational constants are parsed but excluded.
BENCHMARK_TARGETS = tuple(t for t in PROPERTY_ORDER if t not in ROTATIONAL_CONSTANTS)


class ParseError(Exception):
    """XYZ parse failure; carries the 1-indexed line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class AtomCountError(ParseError):
    pass


class UnknownElementError(ParseError):
    pass


class NumberFormatError(ParseError):
    pass


class MissingLineError(ParseError):
    pass


class UnsupportedTargetError(Exception):
    """Requested property is not in the benchmark target set."""


class DegenerateTargetError(Exception):
    """Target has zero variance; normalization is undefined."""


@dataclass(eq=False)
class Molecule:
    """One parsed QM9 record."""

    id: str
    elements: tuple
    coords: np.ndarray            # N x 3, Angstrom
    targets: dict                 # TargetId -> float, all 15 present
    partial_charges: np.ndarray   # N Mulliken charges (parsed, unused by models)
    frequencies_raw: str = ""
    smiles_raw: str = ""
    inchi_raw: str = ""

    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    @property
    def inchi(self) -> str:
        """Relaxed-geometry InChI (last token of the trailing InChI line)."""
        toks = self.inchi_raw.split()
        return toks[-1] if toks else ""

    @property
    def smiles(self) -> str:
        """Relaxed-geometry SMILES (last token of the trailing SMILES line)."""
        toks = self.smiles_raw.split()
        return toks[-1] if toks else ""

    def __eq__(self, other) -> bool:
        if not isinstance(other, Molecule):
            return NotImplemented
        return (
            self.id == other.id
            and self.elements == other.elements
            and np.array_equal(self.coords, other.coords)
            and self.targets == other.targets
            and np.array_equal(self.partial_charges, other.partial_charges)
            and self.frequencies_raw == other.frequencies_raw
            and self.smiles_raw == other.smiles_raw
            and self.inchi_raw == other.inchi_raw
        )


def _parse_float(token: str, line: int) -> float:
    # QM9 files write some exponents as "1.2*^-3"; normalize before float().
    try:
        value = float(token.replace("*^", "e"))
    except ValueError:
        raise NumberFormatError(line, f"non-numeric field {token!r}") from None
    if not math.isfinite(value):
        raise NumberFormatError(line, f"non-finite field {token!r}")
    return value


def _looks_like_atom_line(tokens: list) -> bool:
    if len(tokens) != 5 or tokens[0] not in QM9_ELEMENTS:
        return False
    try:
        for tok in tokens[1:]:
            float(tok.replace("*^", "e"))
    except ValueError:
        return False
    return True


def parse_xyz(text: str) -> Molecule:
    """Parse one QM9-layout extended-XYZ file.

    Layout: atom count; "gdb <index>" tag plus the 15 properties in
    distribution order (A B C mu alpha homo lumo gap r2 zpve U0 U H G Cv);
    one "symbol x y z charge" line per atom; then the frequency, SMILES and
    InChI lines, retained verbatim for the PubChem resolver.
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MissingLineError(1, "empty file, expected atom count")

    count_tokens = lines[0].split()
    if len(count_tokens) != 1:
        raise NumberFormatError(1, f"expected a single atom count, got {lines[0]!r}")
    try:
        n_atoms = int(count_tokens[0])
    except ValueError:
        raise NumberFormatError(1, f"non-numeric atom count {count_tokens[0]!r}") from None
    if n_atoms < 1:
        raise AtomCountError(1, f"atom count must be >= 1, got {n_atoms}")

    if len(lines) < 2:
        raise MissingLineError(2, "missing property line")
    prop_tokens = lines[1].split()
    if len(prop_tokens) != 2 + len(PROPERTY_ORDER):
        raise MissingLineError(
            2,
            f"property line must carry a tag, an index and {len(PROPERTY_ORDER)} values, "
            f"got {len(prop_tokens)} fields",
        )
    mol_id = prop_tokens[1]
    targets = {
        prop: _parse_float(tok, 2) for prop, tok in zip(PROPERTY_ORDER, prop_tokens[2:])
    }

    elements = []
    coords = np.zeros((n_atoms, 3), dtype=np.float64)
    charges = np.zeros(n_atoms, dtype=np.float64)
    for i in range(n_atoms):
        line_no = 3 + i
        tokens = lines[line_no - 1].split() if line_no <= len(lines) else []
        if len(tokens) != 5:
            # Ran into the trailing block (or EOF): the atom block is shorter
            # than the header declared. Name the last actual atom line.
            raise AtomCountError(
                line_no - 1,
                f"header declares {n_atoms} atoms but the atom block ends at line {line_no - 1}",
            )
        symbol = tokens[0]
        if symbol not in QM9_ELEMENTS:
            raise UnknownElementError(
                line_no, f"unknown element symbol {symbol!r} (expected one of {'/'.join(QM9_ELEMENTS)})"
            )
        elements.append(symbol)
        coords[i] = [_parse_float(tok, line_no) for tok in tokens[1:4]]
        charges[i] = _parse_float(tokens[4], line_no)

    after = 3 + n_atoms
    if after <= len(lines) and _looks_like_atom_line(lines[after - 1].split()):
        raise AtomCountError(
            after, f"header declares {n_atoms} atoms but line {after} looks like another atom"
        )

    def trailing(line_no: int, what: str) -> str:
        if line_no > len(lines):
            raise MissingLineError(line_no, f"missing {what} line")
        return lines[line_no - 1]

    return Molecule(
        id=mol_id,
        elements=tuple(elements),
        coords=coords,
        targets=targets,
        partial_charges=charges,
        frequencies_raw=trailing(n_atoms + 3, "frequency"),
        smiles_raw=trailing(n_atoms + 4, "SMILES"),
        inchi_raw=trailing(n_atoms + 5, "InChI"),
    )


def _fmt(value: float) -> str:
    return repr(float(value))


def serialize_xyz(m: Molecule) -> str:
    """Write a Molecule back out in the distribution layout (round-trips)."""
    lines = [str(m.n_atoms)]
    props = "\t".join(_fmt(m.targets[p]) for p in PROPERTY_ORDER)
    lines.append(f"gdb {m.id}\t{props}")
    for sym, xyz, q in zip(m.elements, m.coords, m.partial_charges):
        lines.append("\t".join([sym, _fmt(xyz[0]), _fmt(xyz[1]), _fmt(xyz[2]), _fmt(q)]))
    lines.extend([m.frequencies_raw, m.smiles_raw, m.inchi_raw])
    return "\n".join(lines) + "\n"


def select_target(m: Molecule, target: TargetId) -> float:
    """Stored scalar in native units; rotational constants are not benchmark
    targets and are refused."""
    if target in ROTATIONAL_CONSTANTS:
        raise UnsupportedTargetError(
            f"{target.value} is a rotational constant, not a benchmark target"
        )
    return m.targets[target]


@dataclass
class TargetScaler:
    """Affine target normalization fit on a training split only."""

    mean: float
    std: float

    @classmethod
    def fit(cls, values) -> "TargetScaler":
        ys = np.asarray(list(values), dtype=np.float64)
        if ys.size == 0:
            raise DegenerateTargetError("cannot normalize an empty target list")
        mean = float(ys.mean())
        std = float(ys.std())  # population std
        if std == 0.0:
            raise DegenerateTargetError(f"target has zero variance (all values {mean})")
        return cls(mean=mean, std=std)

    def normalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, y):
        return np.asarray(y, dtype=np.float64) * self.std + self.mean


def normalize_targets(dataset, target: TargetId):
    """Fit normalization on the given molecules and return
    (mean, std, transformed values)."""
    ys = [select_target(m, target) for m in dataset]
    scaler = TargetScaler.fit(ys)
    return scaler.mean, scaler.std, [float(v) for v in scaler.normalize(ys)]


def load_exclusions(path) -> set:
    """Molecule ids to drop (the distribution's unconverged list), one per
    line; '#' comments tolerated. Absent file handling is the caller's call."""
    ids = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            ids.add(line)
    return ids


def load_directory(xyz_dir, exclusions: set | None = None):
    """Parse every .xyz file in a directory.

    Returns (molecules sorted by id, failures) where failures is a list of
    (filename, ParseError). Excluded ids are silently dropped.
    """
    xyz_dir = Path(xyz_dir)
    molecules = []
    failures = []
    for path in sorted(xyz_dir.glob("*.xyz")):
        try:
            mol = parse_xyz(path.read_text(encoding="utf-8"))
        except ParseError as err:
            failures.append((path.name, err))
            continue
        except (OSError, UnicodeDecodeError) as err:
            failures.append((path.name, ParseError(0, f"unreadable file: {err}")))
            continue
        if exclusions and mol.id in exclusions:
            continue
        molecules.append(mol)
    molecules.sort(key=lambda m: m.id)
    return molecules, failures


def write_manifest(path, molecules) -> None:
    """One line-delimited record per molecule: id, atom count, all 15 targets."""
    with open(path, "w", encoding="utf-8") as fh:
        for m in molecules:
            record = {
                "id": m.id,
                "n_atoms": m.n_atoms,
                "targets": {t.value: m.targets[t] for t in PROPERTY_ORDER},
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
