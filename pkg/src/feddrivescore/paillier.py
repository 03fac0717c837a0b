"""Paillier additively homomorphic encryption with a fixed-point codec.

Keys use ``g = n + 1``. Decryption goes through the Chinese remainder
theorem, and encryption draws its blinding factor as ``h_s ** a`` for a
short random exponent ``a`` over a precomputed fixed-base table (the
Damgard-Jurik-Nielsen variant), which is several times faster than a full
``r ** n`` exponentiation.
"""
import hashlib
import json
import math
import random
import secrets
from dataclasses import dataclass
from fractions import Fraction
from numbers import Integral, Real

import gmpy2

from .exceptions import ConfigurationError, DecryptionError, DomainError, KeyMismatchError

MIN_KEY_BITS = 64
DEFAULT_SCALE = 10**6
_WINDOW = 10


def _fingerprint(n):
    return hashlib.sha256(format(int(n), "x").encode()).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class Ciphertext:
    """An encrypted integer tagged with the fingerprint of its public key."""

    value: object
    key_id: str

    def nbytes(self):
        return (int(self.value).bit_length() + 7) // 8

    def to_bytes(self):
        return int(self.value).to_bytes(self.nbytes() or 1, "big")


class PublicKey:
    def __init__(self, n, g=None):
        n = gmpy2.mpz(n)
        if g is not None and gmpy2.mpz(g) != n + 1:
            raise ConfigurationError("only keys with g = n + 1 are supported")
        self.n = n
        self.g = n + 1
        self.nsquare = n * n
        self.bits = int(n.bit_length())
        self.key_id = _fingerprint(n)
        self._exp_bits = max(32, self.bits // 2)
        self._table = None

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.n == other.n

    def __hash__(self):
        return hash(self.key_id)

    def __repr__(self):
        return f"PublicKey(bits={self.bits}, id={self.key_id})"

    # -- blinding --------------------------------------------------------

    def _build_table(self):
        # Public, nothing-up-my-sleeve base derived from n itself.
        seed = int.from_bytes(hashlib.sha512(self.key_id.encode() + b"djn").digest(), "big")
        x = gmpy2.mpz(seed) % self.n
        while gmpy2.gcd(x, self.n) != 1 or x < 2:
            x += 1
        hs = gmpy2.powmod(-(x * x) % self.n, self.n, self.nsquare)
        table = []
        base = hs
        for _ in range((self._exp_bits + _WINDOW - 1) // _WINDOW):
            row = [gmpy2.mpz(1)]
            for _ in range((1 << _WINDOW) - 1):
                row.append(row[-1] * base % self.nsquare)
            table.append(row)
            base = row[-1] * base % self.nsquare
        self._table = table

    def obfuscator(self, rng=None):
        if self._table is None:
            self._build_table()
        a = rng.getrandbits(self._exp_bits) if rng is not None else secrets.randbits(self._exp_bits)
        mask = (1 << _WINDOW) - 1
        acc = gmpy2.mpz(1)
        nsq = self.nsquare
        for row in self._table:
            digit = a & mask
            if digit:
                acc = acc * row[digit] % nsq
            a >>= _WINDOW
            if not a:
                break
        return acc

    # -- operations ------------------------------------------------------

    def _check(self, c):
        if not isinstance(c, Ciphertext):
            raise TypeError(f"expected Ciphertext, got {type(c).__name__}")
        if c.key_id != self.key_id:
            raise KeyMismatchError("ciphertext was produced under a different key")

    def encrypt(self, m, rng=None):
        """Encrypt an integer plaintext in ``[0, n)``."""
        if not isinstance(m, Integral):
            raise DomainError("plaintext must be an integer; use FixedPointCodec for reals")
        m = int(m)
        if not 0 <= m < self.n:
            raise DomainError("plaintext outside [0, n)")
        # (1 + n)^m = 1 + m n  (mod n^2)
        c = (1 + m * self.n) % self.nsquare * self.obfuscator(rng) % self.nsquare
        return Ciphertext(c, self.key_id)

    def add(self, a, b):
        self._check(a)
        self._check(b)
        return Ciphertext(a.value * b.value % self.nsquare, self.key_id)

    def mul(self, a, k):
        """Multiply the plaintext under ``a`` by the integer ``k``."""
        self._check(a)
        if not isinstance(k, Integral):
            raise DomainError("scalar must be an integer")
        k = int(k) % self.n
        return Ciphertext(gmpy2.powmod(a.value, k, self.nsquare), self.key_id)

    def neg(self, a):
        self._check(a)
        return Ciphertext(gmpy2.invert(a.value, self.nsquare), self.key_id)

    def sub(self, a, b):
        return self.add(a, self.neg(b))

    def sum(self, items):
        items = list(items)
        if not items:
            raise ValueError("empty sum")
        acc = items[0]
        for c in items[1:]:
            acc = self.add(acc, c)
        return acc

    def to_json(self):
        return {"n": format(int(self.n), "x"), "g": format(int(self.g), "x"), "bits": self.bits}

    @classmethod
    def from_json(cls, obj):
        try:
            pk = cls(int(obj["n"], 16), int(obj["g"], 16))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed public key: {exc}") from exc
        if "bits" in obj and int(obj["bits"]) != pk.bits:
            raise ConfigurationError("public key bit length does not match its modulus")
        return pk


class PrivateKey:
    def __init__(self, public, p, q):
        p, q = gmpy2.mpz(p), gmpy2.mpz(q)
        if p * q != public.n:
            raise ConfigurationError("p * q does not match the public modulus")
        if q < p:
            p, q = q, p
        self.public = public
        self.p, self.q = p, q
        self.psquare, self.qsquare = p * p, q * q
        self.lam = gmpy2.lcm(p - 1, q - 1)
        self.mu = gmpy2.invert(self._L(gmpy2.powmod(public.g, self.lam, public.nsquare), public.n), public.n)
        self._hp = gmpy2.invert(self._L(gmpy2.powmod(public.g, p - 1, self.psquare), p), p)
        self._hq = gmpy2.invert(self._L(gmpy2.powmod(public.g, q - 1, self.qsquare), q), q)
        self._p_inv_q = gmpy2.invert(p, q)

    @staticmethod
    def _L(x, d):
        return (x - 1) // d

    def _validate(self, c):
        if not isinstance(c, Ciphertext):
            raise TypeError(f"expected Ciphertext, got {type(c).__name__}")
        if c.key_id != self.public.key_id:
            raise KeyMismatchError("ciphertext was produced under a different key")
        v = gmpy2.mpz(c.value)
        if not 0 < v < self.public.nsquare or gmpy2.gcd(v, self.public.n) != 1:
            raise DecryptionError("ciphertext is not a unit modulo n^2")
        return v

    def decrypt(self, c):
        v = self._validate(c)
        mp = self._L(gmpy2.powmod(v, self.p - 1, self.psquare), self.p) * self._hp % self.p
        mq = self._L(gmpy2.powmod(v, self.q - 1, self.qsquare), self.q) * self._hq % self.q
        return int(mp + (mq - mp) * self._p_inv_q % self.q * self.p)

    def decrypt_textbook(self, c):
        """Decrypt with ``L(c^lambda mod n^2) * mu mod n``; slower, kept as a cross-check."""
        v = self._validate(c)
        n = self.public.n
        return int(self._L(gmpy2.powmod(v, self.lam, self.public.nsquare), n) * self.mu % n)

    def to_json(self):
        return {"p": format(int(self.p), "x"), "q": format(int(self.q), "x")}

    @classmethod
    def from_json(cls, obj, public):
        try:
            return cls(public, int(obj["p"], 16), int(obj["q"], 16))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed private key: {exc}") from exc


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey

    @property
    def public_modulus(self):
        return int(self.public.n)

    @property
    def public_generator(self):
        return int(self.public.g)

    @property
    def private_lambda(self):
        return int(self.private.lam)

    @property
    def private_mu(self):
        return int(self.private.mu)

    @property
    def bit_length(self):
        return self.public.bits


def _random_prime(rng, bits):
    while True:
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        p = gmpy2.next_prime(cand)
        if p.bit_length() == bits:
            return p


def keygen(bit_length=1024, rng_seed=None):
    """Generate a key pair; a fixed ``rng_seed`` reproduces the same keys."""
    if not isinstance(bit_length, Integral) or bit_length < MIN_KEY_BITS:
        raise ConfigurationError(f"key length must be an integer >= {MIN_KEY_BITS}")
    if bit_length % 2:
        raise ConfigurationError("key length must be even")
    rng = random.Random(rng_seed) if rng_seed is not None else random.SystemRandom()
    half = bit_length // 2
    while True:
        p = _random_prime(rng, half)
        q = _random_prime(rng, half)
        n = p * q
        if p != q and n.bit_length() == bit_length and gmpy2.gcd(n, (p - 1) * (q - 1)) == 1:
            break
    public = PublicKey(n)
    return KeyPair(public, PrivateKey(public, p, q))


class FixedPointCodec:
    """Map reals to ``Z_n`` as ``round(x * scale)``, negatives wrapping to the top half."""

    def __init__(self, modulus, scale=DEFAULT_SCALE):
        if not isinstance(scale, Integral) or scale < 1:
            raise ConfigurationError("scale must be a positive integer")
        self.modulus = int(modulus)
        self.scale = int(scale)
        self._half = self.modulus // 2

    @property
    def max_abs(self):
        return self._half / self.scale

    def encode(self, x):
        if isinstance(x, Integral):
            v = int(x) * self.scale
        elif isinstance(x, Fraction):
            v = round(x * self.scale)
        elif isinstance(x, Real):
            if not math.isfinite(x):
                raise DomainError("cannot encode a non-finite value")
            v = round(Fraction(float(x)) * self.scale)
        else:
            raise DomainError(f"cannot encode {type(x).__name__}")
        if abs(v) >= self._half:
            raise DomainError("value exceeds the codec's representable range")
        return v % self.modulus

    def decode_int(self, m):
        m = int(m) % self.modulus
        return m - self.modulus if m > self._half else m

    def decode_exact(self, m):
        return Fraction(self.decode_int(m), self.scale)

    def decode(self, m):
        return self.decode_int(m) / self.scale


def encrypt(public, m, rng=None):
    return public.encrypt(m, rng)


def decrypt(private, c):
    return private.decrypt(c)


def hadd(public, a, b):
    return public.add(a, b)


def hmul_plain(public, a, k):
    return public.mul(a, k)


def hneg(public, a):
    return public.neg(a)


def hsub(public, a, b):
    return public.sub(a, b)


def encode_fixed(codec, x):
    return codec.encode(x)


def decode_fixed(codec, m):
    return codec.decode(m)


def save_keypair(keys, public_path, private_path):
    with open(public_path, "w") as fh:
        json.dump(keys.public.to_json(), fh)
    with open(private_path, "w") as fh:
        json.dump(keys.private.to_json(), fh)


def load_keypair(public_path, private_path):
    with open(public_path) as fh:
        public = PublicKey.from_json(json.load(fh))
    with open(private_path) as fh:
        private = PrivateKey.from_json(json.load(fh), public)
    return KeyPair(public, private)
