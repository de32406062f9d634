"""
Feature files and paired datasets.

Feature file layout (little-endian):
    magic (8 bytes) | version u32 | view u8 (0 query, 1 item)
    token dim u32 | condensed tokens per instance u32 | instance count u32
    per instance: condensed float32 (count x dim) | token count u32 | tokens float32
Instance ids are positions in the file.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .binio import BinaryReader, f32_bytes, pack, write_file
from .constants import FEATURE_FILE_MAGIC, FEATURE_FILE_VERSION
from .errors import FormatError
from .models import TokenBag, View

logger = logging.getLogger(__name__)

_VIEW_TAGS = {View.QUERY: 0, View.ITEM: 1}
_TAG_VIEWS = {tag: view for view, tag in _VIEW_TAGS.items()}


@dataclass
class FeatureSet:
    """Contents of one feature file."""
    view: View
    dim: int
    condensed_count: int
    bags: list[TokenBag] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.bags)


def feature_file_bytes(
    bags: Sequence[TokenBag],
    view: Optional[View] = None,
    dim: Optional[int] = None,
    condensed_count: Optional[int] = None,
) -> bytes:
    """Serialize same-view bags; header fields default to those of the first bag."""
    if bags:
        view = view or bags[0].view
        dim = dim or bags[0].dim
        condensed_count = condensed_count or bags[0].condensed.shape[0]
    if view is None or dim is None or condensed_count is None:
        raise ValueError("view, dim and condensed_count are required for an empty feature file")

    parts = [
        FEATURE_FILE_MAGIC,
        pack("I", FEATURE_FILE_VERSION),
        pack("B", _VIEW_TAGS[view]),
        pack("III", dim, condensed_count, len(bags)),
    ]
    for bag in bags:
        if bag.view is not view:
            raise ValueError(f"bag {bag.id} is a {bag.view.value} bag in a {view.value} file")
        bag.check_dims(dim, condensed_count)
        parts.append(f32_bytes(bag.condensed))
        parts.append(pack("I", bag.num_tokens))
        parts.append(f32_bytes(bag.tokens))
    return b"".join(parts)


def write_feature_file(path: Union[str, Path], bags: Sequence[TokenBag], **header) -> None:
    write_file(path, feature_file_bytes(bags, **header))
    logger.info(f"Wrote {len(bags)} bags to {path}")


def read_feature_file(path: Union[str, Path]) -> FeatureSet:
    """
    Read a feature file.

    Raises:
        FormatError: On bad magic/version, truncation or trailing bytes.
    """
    reader = BinaryReader.open(path)
    reader.expect_magic(FEATURE_FILE_MAGIC, "feature")
    reader.expect_version(FEATURE_FILE_VERSION, "feature")
    tag = reader.u8()
    if tag not in _TAG_VIEWS:
        raise FormatError(str(path), f"unknown view tag {tag}")
    dim, condensed_count, count = reader.unpack("III")
    if dim == 0 or condensed_count == 0:
        raise FormatError(str(path), "token dim and condensed count must be positive")

    features = FeatureSet(view=_TAG_VIEWS[tag], dim=dim, condensed_count=condensed_count)
    for index in range(count):
        condensed = reader.array("<f4", condensed_count * dim).reshape(condensed_count, dim)
        num_tokens = reader.u32()
        if num_tokens == 0:
            raise FormatError(str(path), f"instance {index} has no tokens")
        tokens = reader.array("<f4", num_tokens * dim).reshape(num_tokens, dim)
        try:
            features.bags.append(TokenBag(features.view, tokens, condensed, id=index))
        except ValueError as e:
            raise FormatError(str(path), str(e)) from e
    reader.expect_end()
    return features


@dataclass
class PairedDataset:
    """Matched pairs: queries[i] describes items[i]."""
    queries: list[TokenBag]
    items: list[TokenBag]

    def __post_init__(self):
        if len(self.queries) != len(self.items):
            raise ValueError(
                f"paired dataset has {len(self.queries)} queries but {len(self.items)} items"
            )
        if any(q.view is not View.QUERY for q in self.queries):
            raise ValueError("queries must be query-view bags")
        if any(v.view is not View.ITEM for v in self.items):
            raise ValueError("items must be item-view bags")

    def __len__(self) -> int:
        return len(self.queries)

    def subset(self, indices: Sequence[int]) -> "PairedDataset":
        """Pairs at `indices`, re-identified 0..n-1 so ids stay aligned."""
        queries, items = [], []
        for new_id, i in enumerate(indices):
            q, v = self.queries[i], self.items[i]
            queries.append(TokenBag(q.view, q.tokens, q.condensed, id=new_id))
            items.append(TokenBag(v.view, v.tokens, v.condensed, id=new_id))
        return PairedDataset(queries, items)

    def split(self, val_fraction: float, seed: int, val_max_pairs: int = 0) -> tuple["PairedDataset", "PairedDataset"]:
        """Seeded train/validation split; validation may be empty."""
        n = len(self)
        n_val = int(round(n * val_fraction))
        if val_max_pairs:
            n_val = min(n_val, val_max_pairs)
        if n_val >= n:
            n_val = max(n - 1, 0)
        order = np.random.default_rng(seed).permutation(n)
        val_idx = sorted(order[:n_val].tolist())
        train_idx = sorted(order[n_val:].tolist())
        return self.subset(train_idx), self.subset(val_idx)


def load_paired(query_path: Union[str, Path], item_path: Union[str, Path]) -> PairedDataset:
    """Read matched query and item feature files."""
    queries = read_feature_file(query_path)
    items = read_feature_file(item_path)
    if queries.view is not View.QUERY:
        raise FormatError(str(query_path), "expected a query feature file")
    if items.view is not View.ITEM:
        raise FormatError(str(item_path), "expected an item feature file")
    return PairedDataset(queries.bags, items.bags)
