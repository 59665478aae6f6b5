"""Link-aware temporal link prediction by pattern recognition over attention images."""

from linkpattern.graph_store import (
    DatasetSplit,
    Link,
    TemporalGraph,
    chronological_split,
    history_before,
    load_csv,
    sample_negative,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "Link",
    "TemporalGraph",
    "chronological_split",
    "history_before",
    "load_csv",
    "sample_negative",
]
