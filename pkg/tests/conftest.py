import pytest

from nvmmcache.backing import BackingStore
from nvmmcache.facade import EngineConfig, engine_open
from nvmmcache.pmem import PersistentRegion

KIB = 1 << 10


@pytest.fixture
def small_nvlog():
    def make(capacity=64 * KIB, dram=16 * KIB, batch=4, images=None):
        store = BackingStore.from_images(images or {"f": bytes(64 * KIB)})
        region = PersistentRegion(capacity)
        config = EngineConfig("nvlog", nvmm_capacity=capacity, dram_cache_capacity=dram,
                              drain_batch_pages=batch, background_drain=False)
        return engine_open(config, region=region, store=store), region, store
    return make


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
        lines.append(line)
        print(line)
        assert ok, line
    return record
