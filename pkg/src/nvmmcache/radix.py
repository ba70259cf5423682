"""Fixed-fanout radix tree used as the NVPages page index."""

from __future__ import annotations

FANOUT_BITS = 6
FANOUT = 1 << FANOUT_BITS
_MASK = FANOUT - 1


class _Node:
    __slots__ = ("slots", "count")

    def __init__(self):
        self.slots = [None] * FANOUT
        self.count = 0


class _Tree:
    """One tree per file, keyed by page number; height grows on demand."""

    __slots__ = ("root", "height")

    def __init__(self):
        self.root = _Node()
        self.height = 1

    def _max_key(self) -> int:
        return (1 << (FANOUT_BITS * self.height)) - 1

    def get(self, key: int):
        if key > self._max_key():
            return None
        node = self.root
        for level in range(self.height - 1, 0, -1):
            node = node.slots[(key >> (FANOUT_BITS * level)) & _MASK]
            if node is None:
                return None
        return node.slots[key & _MASK]

    def insert(self, key: int, value) -> None:
        while key > self._max_key():
            top = _Node()
            if self.root.count:
                top.slots[0] = self.root
                top.count = 1
            self.root = top
            self.height += 1
        node = self.root
        for level in range(self.height - 1, 0, -1):
            idx = (key >> (FANOUT_BITS * level)) & _MASK
            child = node.slots[idx]
            if child is None:
                child = node.slots[idx] = _Node()
                node.count += 1
            node = child
        idx = key & _MASK
        if node.slots[idx] is None:
            node.count += 1
        node.slots[idx] = value

    def remove(self, key: int):
        if key > self._max_key():
            return None
        path = []
        node = self.root
        for level in range(self.height - 1, 0, -1):
            idx = (key >> (FANOUT_BITS * level)) & _MASK
            path.append((node, idx))
            node = node.slots[idx]
            if node is None:
                return None
        idx = key & _MASK
        value = node.slots[idx]
        if value is None:
            return None
        node.slots[idx] = None
        node.count -= 1
        # prune empty interior nodes on the way back up
        while path and node.count == 0:
            parent, pidx = path.pop()
            parent.slots[pidx] = None
            parent.count -= 1
            node = parent
        return value


class RadixIndex:
    """Maps ``(file_id, page_no)`` to a value; lookups never allocate."""

    def __init__(self):
        self._trees: dict[int, _Tree] = {}
        self._len = 0

    def __len__(self):
        return self._len

    def lookup(self, file_id: int, page_no: int):
        tree = self._trees.get(file_id)
        return None if tree is None else tree.get(page_no)

    def insert(self, file_id: int, page_no: int, value) -> None:
        if value is None:
            raise ValueError("cannot index None")
        tree = self._trees.get(file_id)
        if tree is None:
            tree = self._trees[file_id] = _Tree()
        if tree.get(page_no) is None:
            self._len += 1
        tree.insert(page_no, value)

    def remove(self, file_id: int, page_no: int):
        tree = self._trees.get(file_id)
        if tree is None:
            return None
        value = tree.remove(page_no)
        if value is not None:
            self._len -= 1
        return value

    def clear(self) -> None:
        self._trees.clear()
        self._len = 0
