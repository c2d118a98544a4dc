from .artifacts import (
    check_compatible,
    load_checkpoint,
    load_corpus,
    load_embedding,
    load_store,
    load_tokens,
    save_checkpoint,
    save_corpus,
    save_embedding,
    save_store,
    save_tokens,
)
from .container import FORMAT_VERSION, MAGIC, read_container, write_container

__all__ = [
    "check_compatible",
    "load_checkpoint",
    "load_corpus",
    "load_embedding",
    "load_store",
    "load_tokens",
    "save_checkpoint",
    "save_corpus",
    "save_embedding",
    "save_store",
    "save_tokens",
    "FORMAT_VERSION",
    "MAGIC",
    "read_container",
    "write_container",
]
