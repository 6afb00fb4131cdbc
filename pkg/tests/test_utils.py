from pathlib import Path

from flowdesc.utils import derive_seed, file_digest, make_rng


def test_derive_seed_is_stable() -> None:
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert 0 <= derive_seed(0, 1, 2) < 2**63


def test_derive_seed_separates_keys() -> None:
    seeds = {derive_seed(seed, epoch, pair) for seed in range(3) for epoch in range(3) for pair in range(3)}
    assert len(seeds) == 27


def test_make_rng_streams() -> None:
    first = make_rng(4, 2).random(5)
    assert (first == make_rng(4, 2).random(5)).all()
    assert not (first == make_rng(4, 3).random(5)).all()


def test_file_digest(tmp_path: Path) -> None:
    path = tmp_path / "blob.bin"
    path.write_bytes(b"descriptor")
    digest = file_digest(path)

    assert len(digest) == 16
    assert digest == file_digest(path)
    path.write_bytes(b"descriptors")
    assert digest != file_digest(path)
