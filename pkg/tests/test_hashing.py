from theme_detection.hashing import ContentHasher, digest_bytes, digest_file, digest_parts


class TestDigests:
    def test_text_and_bytes_agree(self):
        assert digest_bytes("stolen card") == digest_bytes(b"stolen card")
        assert len(digest_bytes(b"")) == 64

    def test_file_digest_ignores_path(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        a.write_bytes(b"same content")
        b.write_bytes(b"same content")
        assert digest_file(a) == digest_file(b) == digest_bytes(b"same content")

    def test_parts_are_length_prefixed(self):
        assert digest_parts(["ab", "c"]) != digest_parts(["a", "bc"])
        assert digest_parts(["ab", "c"]) == ContentHasher().update("ab").update(b"c").hexdigest()

    def test_hasher_file_update(self, tmp_path):
        path = tmp_path / "data.bin"
        path.write_bytes(b"\x00" * 10)
        assert ContentHasher().update_file(path).hexdigest() == digest_bytes(b"\x00" * 10)
