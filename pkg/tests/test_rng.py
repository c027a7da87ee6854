from byzsim.rng import derive_seed, stream_key, substream


def test_same_key_same_stream():
    a = substream(7, "sample", 3).integers(0, 1000, size=20)
    b = substream(7, "sample", 3).integers(0, 1000, size=20)
    assert (a == b).all()


def test_keys_differ_by_every_component():
    keys = {stream_key(7, "sample", 3), stream_key(8, "sample", 3), stream_key(7, "attack", 3), stream_key(7, "sample", 4)}
    assert len(keys) == 4


def test_ids_are_not_concatenated_ambiguously():
    assert stream_key(1, "t", 12, 3) != stream_key(1, "t", 1, 23)


def test_derive_seed_is_nonnegative_63_bit():
    s = derive_seed(0, "topology")
    assert 0 <= s < 2**63
    assert s == derive_seed(0, "topology")
