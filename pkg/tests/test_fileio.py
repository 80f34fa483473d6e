import pytest

from symptomrank.fileio import atomic_write


class TestAtomicWrite:
    def test_writes_complete_file(self, tmp_path):
        target = tmp_path / "nested" / "out.txt"
        with atomic_write(target) as fh:
            fh.write("payload")
        assert target.read_text() == "payload"

    def test_interrupted_write_leaves_nothing(self, tmp_path):
        target = tmp_path / "out.txt"
        with pytest.raises(RuntimeError):
            with atomic_write(target) as fh:
                fh.write("partial")
                raise RuntimeError("interrupted")
        assert not target.exists()
        assert list(tmp_path.iterdir()) == []

    def test_overwrite_is_all_or_nothing(self, tmp_path):
        target = tmp_path / "out.txt"
        target.write_text("old")
        with pytest.raises(RuntimeError):
            with atomic_write(target) as fh:
                fh.write("new but interrupted")
                raise RuntimeError("boom")
        assert target.read_text() == "old"
