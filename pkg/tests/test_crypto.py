"""Crypto primitives: account signatures, ring signatures, commitments."""

import hashlib
from random import Random

import pytest

from potchain import crypto

TOY_BITS = 64


@pytest.fixture(scope="module")
def toy_ring():
    rng = Random(101)
    identities = [crypto.make_identity(rng, rsa_bits=TOY_BITS) for _ in range(8)]
    return identities, [i.ring_pk for i in identities]


def make_packet(sr=1, msg_id=b"I am user 3"):
    return crypto.make_packet(msg_id, sr, 777_000, 31_123456, 121_654321)


# =============================================================================
# Account signatures
# =============================================================================

def test_sign_verify_roundtrip():
    rng = Random(1)
    sk = crypto.make_signing_key(rng)
    pk = crypto.signing_pubkey(sk)
    sig = crypto.sign(b"payload", sk)
    assert crypto.verify(b"payload", sig, pk)


def test_verify_rejects_flipped_payload():
    rng = Random(2)
    sk = crypto.make_signing_key(rng)
    pk = crypto.signing_pubkey(sk)
    sig = crypto.sign(b"payload", sk)
    assert not crypto.verify(b"paxload", sig, pk)
    mangled = bytes([sig[0] ^ 1]) + sig[1:]
    assert not crypto.verify(b"payload", mangled, pk)


def test_verify_rejects_wrong_key():
    rng = Random(3)
    sk_a, sk_b = crypto.make_signing_key(rng), crypto.make_signing_key(rng)
    sig = crypto.sign(b"m", sk_a)
    assert not crypto.verify(b"m", sig, crypto.signing_pubkey(sk_b))


# =============================================================================
# Sensing packets
# =============================================================================

def test_packet_canonical_layout():
    packet = make_packet()
    raw = packet.canonical_bytes()
    assert len(raw) == 32 + 1 + 8 + 4 + 4
    assert raw[:32] == hashlib.sha256(b"I am user 3").digest()
    assert raw[32] == 1
    assert int.from_bytes(raw[33:41], "big") == 777_000


def test_packet_negative_coordinates():
    packet = crypto.make_packet(b"x", 0, 1, -90_000_000, -180_000_000)
    raw = packet.canonical_bytes()
    assert int.from_bytes(raw[41:45], "big", signed=True) == -90_000_000
    assert int.from_bytes(raw[45:49], "big", signed=True) == -180_000_000


# =============================================================================
# Ring signatures
# =============================================================================

@pytest.mark.parametrize("size", [1, 2, 3, 5, 8])
def test_ring_completeness_every_position(toy_ring, size):
    identities, pks = toy_ring
    rng = Random(1000 + size)
    ring = pks[:size]
    packet = make_packet()
    for signer in range(size):
        sig = crypto.ring_sign(packet, signer, identities[signer].ring_sk,
                               ring, rng)
        assert crypto.ring_verify(packet, sig)


def test_ring_signature_reveals_no_signer_field(toy_ring):
    identities, pks = toy_ring
    rng = Random(11)
    ring = pks[:5]
    packet = make_packet()
    sig_a = crypto.ring_sign(packet, 1, identities[1].ring_sk, ring, rng)
    sig_b = crypto.ring_sign(packet, 4, identities[4].ring_sk, ring, rng)
    assert crypto.ring_verify(packet, sig_a)
    assert crypto.ring_verify(packet, sig_b)
    # output carries only (ring, glue value, xs): same shape either way
    for sig in (sig_a, sig_b):
        assert set(sig.__dataclass_fields__) == {"ring", "v", "xs"}
        assert len(sig.xs) == len(sig.ring)


def test_ring_rejects_tampered_packet(toy_ring):
    identities, pks = toy_ring
    rng = Random(12)
    ring = pks[:4]
    packet = make_packet(sr=1)
    sig = crypto.ring_sign(packet, 2, identities[2].ring_sk, ring, rng)
    flipped = make_packet(sr=0)
    assert not crypto.ring_verify(flipped, sig)


def test_ring_rejects_random_x_substitution(toy_ring):
    identities, pks = toy_ring
    rng = Random(13)
    ring = pks[:4]
    packet = make_packet()
    sig = crypto.ring_sign(packet, 0, identities[0].ring_sk, ring, rng)
    rejected = 0
    for trial in range(100):
        slot = rng.randrange(len(ring))
        xs = list(sig.xs)
        xs[slot] = rng.getrandbits(128)
        forged = crypto.RingSignature(ring=sig.ring, v=sig.v, xs=tuple(xs))
        if not crypto.ring_verify(packet, forged):
            rejected += 1
    assert rejected == 100


def test_ring_verification_symmetric_under_rotation(toy_ring):
    """The ring equation closes from any starting slot: rotating the
    (pk, x) pairs together with the glue value keeps the signature valid."""
    identities, pks = toy_ring
    rng = Random(14)
    ring = pks[:5]
    packet = make_packet()
    sig = crypto.ring_sign(packet, 3, identities[3].ring_sk, ring, rng)
    bits = crypto._common_domain_bits(list(sig.ring))
    key = crypto.sha256(packet.canonical_bytes())
    ys = [crypto._forward(pk, x, 1 << bits) for pk, x in zip(sig.ring, sig.xs)]
    for shift in range(1, 5):
        rotated_ring = sig.ring[shift:] + sig.ring[:shift]
        rotated_xs = sig.xs[shift:] + sig.xs[:shift]
        # the rotated sequence closes from the correspondingly advanced glue
        v_shift = sig.v
        for y in ys[:shift]:
            v_shift = crypto._permute(key, v_shift ^ y, bits)
        rotated = crypto.RingSignature(ring=rotated_ring, v=v_shift,
                                       xs=rotated_xs)
        assert crypto.ring_verify(packet, rotated)


def test_ring_sign_wrong_secret_raises(toy_ring):
    identities, pks = toy_ring
    rng = Random(15)
    with pytest.raises(crypto.BadKey):
        crypto.ring_sign(make_packet(), 0, identities[1].ring_sk, pks[:3], rng)


def test_ring_verify_malformed_inputs_false(toy_ring):
    identities, pks = toy_ring
    packet = make_packet()
    empty = crypto.RingSignature(ring=(), v=0, xs=())
    assert not crypto.ring_verify(packet, empty)
    mismatched = crypto.RingSignature(ring=tuple(pks[:2]), v=1, xs=(1,))
    assert not crypto.ring_verify(packet, mismatched)
    out_of_domain = crypto.RingSignature(ring=tuple(pks[:2]), v=-1, xs=(1, 2))
    assert not crypto.ring_verify(packet, out_of_domain)


def test_ring_signature_serialization_roundtrippable(toy_ring):
    identities, pks = toy_ring
    rng = Random(16)
    sig = crypto.ring_sign(make_packet(), 1, identities[1].ring_sk, pks[:3], rng)
    raw = sig.canonical_bytes()
    assert isinstance(raw, bytes) and len(raw) > 0
    # deterministic serialization
    assert raw == sig.canonical_bytes()


# =============================================================================
# Commitments
# =============================================================================

def test_commit_deterministic():
    rnd = bytes(range(32))
    a = crypto.commit(1, rnd, b"msg", b"csc0", b"pk")
    b = crypto.commit(1, rnd, b"msg", b"csc0", b"pk")
    assert a.digest == b.digest


def test_commit_differs_with_rnd():
    rnd1, rnd2 = bytes(32), bytes([1] * 32)
    assert (crypto.commitment_digest(1, rnd1, b"m")
            != crypto.commitment_digest(1, rnd2, b"m"))


def test_commit_matches_external_hash_tool():
    # layout: SR (1 byte) || RND (32) || msgID
    rnd = bytes(range(32))
    expected = hashlib.sha256(b"\x01" + rnd + b"I like apples").digest()
    assert crypto.commitment_digest(1, rnd, b"I like apples") == expected


def test_reveal_check():
    rnd = bytes([7] * 32)
    c = crypto.commit(1, rnd, b"msgid", b"csc", b"pk")
    assert crypto.reveal_check(c, 1, rnd, b"msgid")
    assert not crypto.reveal_check(c, 0, rnd, b"msgid")
    assert not crypto.reveal_check(c, 1, bytes(32), b"msgid")
    assert not crypto.reveal_check(c, 1, rnd, b"other")


def test_commit_requires_32_byte_rnd():
    with pytest.raises(ValueError):
        crypto.commitment_digest(1, b"short", b"m")


# =============================================================================
# Identities
# =============================================================================

def test_identity_deterministic_from_seed():
    a = crypto.make_identity(Random(99), rsa_bits=TOY_BITS)
    b = crypto.make_identity(Random(99), rsa_bits=TOY_BITS)
    assert a.account_id == b.account_id
    assert a.ring_sk == b.ring_sk


def test_identity_account_id_is_digest():
    ident = crypto.make_identity(Random(100), rsa_bits=TOY_BITS)
    assert len(ident.account_id) == 32
    n_width = (ident.ring_sk.n.bit_length() + 7) // 8
    expected = crypto.sha256(ident.sig_pk
                             + ident.ring_pk.canonical_bytes(n_width))
    assert ident.account_id == expected


def test_rsa_key_inverts():
    sk = crypto.make_ring_key(Random(5), bits=TOY_BITS)
    for value in (0, 1, 12345, sk.n - 1):
        assert pow(pow(value, sk.e, sk.n), sk.d, sk.n) == value
