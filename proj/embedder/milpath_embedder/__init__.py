"""Patch embedding side of milpath: writes `.bag` files for the C++ trainer."""

from .bagfile import BAG_MAGIC, BAG_VERSION, read_bag, write_bag
from .features import embed_patches

__all__ = ["BAG_MAGIC", "BAG_VERSION", "read_bag", "write_bag", "embed_patches"]
