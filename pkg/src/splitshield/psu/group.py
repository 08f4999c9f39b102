"""Arithmetic in QR(Z_p^*) for a safe prime p = 2q + 1."""
from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

import gmpy2

# RFC 3526 group 14; p and (p-1)/2 are both prime.
_MODP_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
_SAFE_64 = 0xD9A54A7B63FDC13F
_SAFE_256 = 0x857A40B2431050FD18B8E2BF18E9F83C4FD3C0DEB3689D25DFFBBDD5508578C3


def powmod(x: int, e: int, m: int) -> int:
    return int(gmpy2.powmod(x, e, m))


@dataclass(frozen=True)
class GroupParams:
    p: int
    q: int
    name: str = ""

    @classmethod
    def from_prime(cls, p: int, name: str = "", check: bool = True) -> "GroupParams":
        q = (p - 1) // 2
        if check and not (p >= 7 and gmpy2.is_prime(p, 32) and gmpy2.is_prime(q, 32)):
            raise ValueError(f"{p} is not a safe prime")
        return cls(p, q, name)

    @property
    def width(self) -> int:
        """Bytes per encoded element."""
        return (self.p.bit_length() + 7) // 8


GROUPS = {
    "test": GroupParams(23, 11, "test"),
    "toy64": GroupParams(_SAFE_64, (_SAFE_64 - 1) // 2, "toy64"),
    "safe256": GroupParams(_SAFE_256, (_SAFE_256 - 1) // 2, "safe256"),
    "modp2048": GroupParams(_MODP_2048, (_MODP_2048 - 1) // 2, "modp2048"),
}
DEFAULT_GROUP = "modp2048"


def get_group(name_or_prime) -> GroupParams:
    if isinstance(name_or_prime, GroupParams):
        return name_or_prime
    if isinstance(name_or_prime, int):
        return GroupParams.from_prime(name_or_prime)
    try:
        return GROUPS[name_or_prime]
    except KeyError:
        raise ValueError(f"unknown group {name_or_prime!r}; choose from {sorted(GROUPS)}") from None


def is_qr(x: int, params: GroupParams) -> bool:
    """Euler's criterion: x^q = 1 mod p."""
    return 1 <= x < params.p and powmod(x, params.q, params.p) == 1


def encode(x: int, params: GroupParams) -> bytes:
    """Fixed-width big-endian encoding; byte order equals numeric order."""
    return int(x).to_bytes(params.width, "big")


def decode(b: bytes, params: GroupParams) -> int:
    return int.from_bytes(b, "big")


def _digest_int(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest(), "big")


def hash_to_group(id_bytes: bytes | str, params: GroupParams) -> int:
    """Map an identifier into QR(Z_p^*): SHA-256, reduce into [1, p-1], square."""
    if isinstance(id_bytes, str):
        id_bytes = id_bytes.encode()
    if not id_bytes:
        raise ValueError("empty identifier")
    counter = 0
    data = id_bytes
    while True:
        h = _digest_int(data) % (params.p - 1) + 1
        x = h * h % params.p
        if x != 0:
            return x
        counter += 1  # unreachable for h in [1, p-1]; kept for other reductions
        data = id_bytes + counter.to_bytes(4, "big")


def random_exponent(params: GroupParams, rng=None) -> int:
    """Uniform exponent in [1, q-1]. ``rng`` is a numpy Generator, or ``None`` for ``secrets``."""
    if params.q < 2:
        raise ValueError("group too small")
    nbytes = (params.q.bit_length() + 7) // 8 + 8  # 64 extra bits make the modulo bias negligible
    raw = secrets.token_bytes(nbytes) if rng is None else rng.bytes(nbytes)
    return int.from_bytes(raw, "big") % (params.q - 1) + 1


def exp_all(elements, exponent: int, params: GroupParams) -> list:
    if not 1 <= exponent <= params.q - 1:
        raise ValueError("exponent must lie in [1, q-1]")
    return [powmod(x, exponent, params.p) for x in elements]


def shuffled(items: list, rng=None) -> list:
    if rng is None:
        out = list(items)
        secrets.SystemRandom().shuffle(out)
        return out
    return [items[i] for i in rng.permutation(len(items))]


def exp_shuffle(elements, exponent: int, params: GroupParams, rng=None) -> list:
    """Raise every element to ``exponent`` mod p and return them in random order."""
    return shuffled(exp_all(elements, exponent, params), rng)
