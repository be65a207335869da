"""Black-box scoring functions for molecular optimization.

Every oracle exposes only a name and ``score(smiles) -> float in [0, 1]``;
target structures live inside the oracle definition, never in optimizer
config, so the optimizer sees nothing but scores. Nonparseable input scores
0.0 rather than raising. Remote oracles speak the wire protocol from the
adapters module; transport failures abort the run before any budget is
spent on the failed call.
"""

from __future__ import annotations

import json
import math

from .fingerprint import Fingerprint, morgan_fingerprint, tanimoto
from .smiles import SmilesError, molecular_formula, parse


def _fingerprint_of(smiles: str) -> Fingerprint | None:
    try:
        return morgan_fingerprint(parse(smiles))
    except SmilesError:
        return None


class Oracle:
    """Interface: a named, deterministic map from SMILES to [0, 1]."""

    name: str

    def score(self, smiles: str) -> float:
        raise NotImplementedError


class ConstantOracle(Oracle):
    def __init__(self, value: float, name: str = "constant"):
        self.value = float(value)
        self.name = name

    def score(self, smiles: str) -> float:
        if _fingerprint_of(smiles) is None:
            return 0.0
        return self.value


class RediscoveryOracle(Oracle):
    """Tanimoto similarity to a hidden target molecule."""

    def __init__(self, target_smiles: str, name: str = "rediscovery"):
        fp = _fingerprint_of(target_smiles)
        if fp is None:
            raise ValueError(f"target does not parse: {target_smiles!r}")
        self._target_fp = fp
        self.name = name

    def score(self, smiles: str) -> float:
        fp = _fingerprint_of(smiles)
        if fp is None:
            return 0.0
        return tanimoto(fp, self._target_fp)


class IsomerOracle(Oracle):
    """exp(-sum_e |count_e - target_e| / 2) over the union of elements.

    Equals 1 exactly when the molecular formula matches the target.
    """

    def __init__(self, formula: dict[str, int] | str, name: str = "isomer"):
        if isinstance(formula, str):
            formula = parse_formula(formula)
        self._target = {el: int(c) for el, c in formula.items() if c > 0}
        self.name = name

    def score(self, smiles: str) -> float:
        try:
            counts = molecular_formula(parse(smiles))
        except SmilesError:
            return 0.0
        total = 0
        for el in set(counts) | set(self._target):
            total += abs(counts.get(el, 0) - self._target.get(el, 0))
        return math.exp(-total / 2.0)


class MedianOracle(Oracle):
    """Geometric mean of Tanimoto similarities to two target molecules."""

    def __init__(self, target_a: str, target_b: str, name: str = "median"):
        fp_a = _fingerprint_of(target_a)
        fp_b = _fingerprint_of(target_b)
        if fp_a is None or fp_b is None:
            raise ValueError("both median targets must parse")
        self._fp_a = fp_a
        self._fp_b = fp_b
        self.name = name

    def score(self, smiles: str) -> float:
        fp = _fingerprint_of(smiles)
        if fp is None:
            return 0.0
        return math.sqrt(tanimoto(fp, self._fp_a) * tanimoto(fp, self._fp_b))


class ExternalOracle(Oracle):
    """Forwards scoring to a remote endpoint over the wire protocol."""

    def __init__(self, endpoint, name: str = "external"):
        from .adapters import ProtocolError
        self._endpoint = endpoint
        self._protocol_error = ProtocolError
        self.name = name

    def score(self, smiles: str) -> float:
        reply = self._endpoint.request({"op": "score", "smiles": smiles})
        value = reply.get("score")
        if not isinstance(value, (int, float)) or isinstance(value, bool) \
                or not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise self._protocol_error(f"score outside [0, 1]: {value!r}")
        return float(value)


def parse_formula(text: str) -> dict[str, int]:
    """Parse a Hill-style formula string like 'C7H8N2O2' into counts."""
    counts: dict[str, int] = {}
    i = 0
    while i < len(text):
        if not text[i].isalpha() or not text[i].isupper():
            raise ValueError(f"malformed formula {text!r}")
        j = i + 1
        if j < len(text) and text[j].islower():
            j += 1
        el = text[i:j]
        k = j
        while k < len(text) and text[k].isdigit():
            k += 1
        counts[el] = counts.get(el, 0) + (int(text[j:k]) if k > j else 1)
        i = k
    if not counts:
        raise ValueError("empty formula")
    return counts


def load_oracle(source) -> tuple[Oracle, list[str]]:
    """Build an oracle from a definition file or dict.

    Definition: {"type": ..., "name": ..., "params": {...}} with type one of
    rediscovery, isomer, median, constant, external. Returns the oracle plus
    the target SMILES hints used only by the explicitly non-black-box
    target-seeded mode.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    else:
        spec = dict(source)
    kind = spec.get("type")
    name = spec.get("name", kind)
    params = spec.get("params", {})
    if kind == "rediscovery":
        oracle = RediscoveryOracle(params["target_smiles"], name=name)
        hints = [params["target_smiles"]]
    elif kind == "isomer":
        oracle = IsomerOracle(params["formula"], name=name)
        hints = []
    elif kind == "median":
        targets = params["targets"]
        if len(targets) != 2:
            raise ValueError("median oracle needs exactly two targets")
        oracle = MedianOracle(targets[0], targets[1], name=name)
        hints = list(targets)
    elif kind == "constant":
        oracle = ConstantOracle(params.get("value", 0.5), name=name)
        hints = []
    elif kind == "external":
        from .adapters import connect
        endpoint = connect(params["endpoint"])
        oracle = ExternalOracle(endpoint, name=name)
        hints = []
    else:
        raise ValueError(f"unknown oracle type {kind!r}")
    return oracle, hints
