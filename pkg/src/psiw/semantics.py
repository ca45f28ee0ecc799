"""Semantic category ids (Matterport-40 numbering, restricted to 0-39)."""
from __future__ import annotations

import numpy as np

VOID = 0
WALL = 1
FLOOR = 2
CHAIR = 3
DOOR = 4
TABLE = 5
CABINET = 7
WINDOW = 9
SOFA = 10
BED = 11
CEILING = 17
DESK = 36  # "furniture"
MISC = 39  # "objects"

NUM_CATEGORIES = 40
BACKGROUND = 255

# channel order of the reduced vocabulary used by the synthetic scenes
SYNTH_CATEGORIES = (WALL, FLOOR, CEILING, BED, SOFA, CHAIR, TABLE, DESK, CABINET, DOOR, WINDOW, MISC)

NAMES = {
    VOID: "void", WALL: "wall", FLOOR: "floor", CHAIR: "chair", DOOR: "door", TABLE: "table",
    CABINET: "cabinet", WINDOW: "window", SOFA: "sofa", BED: "bed", CEILING: "ceiling",
    DESK: "desk", MISC: "misc",
}


def channel_lookup(categories=SYNTH_CATEGORIES) -> np.ndarray:
    """256-entry table from category id to channel index (-1 = no channel).

    Ids outside ``categories`` fall into the MISC channel when it is present.
    """
    table = np.full(256, -1, dtype=np.int64)
    categories = tuple(categories)
    misc = categories.index(MISC) if MISC in categories else -1
    table[:NUM_CATEGORIES] = misc
    for ch, cat in enumerate(categories):
        table[cat] = ch
    table[BACKGROUND] = -1
    return table
