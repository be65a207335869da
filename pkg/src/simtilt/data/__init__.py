"""Bundled data files: a synthetic training corpus and held-out targets."""

from importlib import resources

from ..smiles import read_corpus


def _path(name: str):
    return resources.files(__package__).joinpath(name)


def bundled_corpus_path():
    """10k synthetic molecules, one SMILES per line."""
    return _path("corpus_10k.smi")


def load_corpus() -> list[str]:
    return read_corpus(bundled_corpus_path())


def load_rediscovery_target() -> str:
    """Held-out optimization target whose scaffold relatives are in the corpus."""
    return read_corpus(_path("rediscovery_target.smi"))[0]


def load_similarity_targets() -> list[str]:
    """Five held-out targets for similarity-guided generation checks."""
    return read_corpus(_path("similarity_targets.smi"))
