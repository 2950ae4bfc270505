//! Prime-order subgroups of `Z_P^*` used by the threshold DPRF.
//!
//! `P = m * q + 1` with `q` prime; the generator has order `q` and all
//! exponent arithmetic (Shamir shares, Lagrange coefficients) is mod `q`.

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::Rng;
use sha2::{Digest, Sha512};

use super::SroError;

// 512-bit modulus with a 256-bit prime-order subgroup, derived by a
// deterministic search from fixed labels (see `production_parameters_are_sound`).
const PROD_ORDER: &str = "b6357d50ca3971958618bb8e57aaea01c83d4783ac8dc32c92c30a5ce120dc27";
const PROD_MODULUS: &str = "98f99145bbeddf5a896750cc964ae7fa0bafa76fb51b2a497695557657d9e0da\
                            55cbbe19ccf6a1e9189a54079d070776f12ea1c7adb64622045f773ee1977ff5";
const PROD_COFACTOR: &str = "d6ed3c68e0c77e2233216a78e00a2e9fc2c3f97e647561b87a4c812cdd8a94ec";
const PROD_GENERATOR: &str = "6c5e71dea4d4dd7e6abbd44a4faf1a88199012c29cc6d28cc25a72ad31d9b14c\
                              c9fc95e137092bd7bdc5a6953116648e2cc42ab9f17ade9ce233b5b9d03fc9d6";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupParams {
    modulus: BigUint,
    order: BigUint,
    cofactor: BigUint,
    generator: BigUint,
    byte_len: usize,
}

fn hex(s: &str) -> BigUint {
    BigUint::parse_bytes(s.as_bytes(), 16).expect("valid hex constant")
}

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut d = 3u64;
    while d.saturating_mul(d) <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

impl GroupParams {
    fn from_parts(modulus: BigUint, order: BigUint, cofactor: BigUint, generator: BigUint) -> Self {
        let byte_len = modulus.bits().div_ceil(8) as usize;
        GroupParams {
            modulus,
            order,
            cofactor,
            generator,
            byte_len,
        }
    }

    pub fn production() -> Self {
        Self::from_parts(
            hex(PROD_MODULUS),
            hex(PROD_ORDER),
            hex(PROD_COFACTOR),
            hex(PROD_GENERATOR),
        )
    }

    /// Small subgroup of prime order `p` for exhaustive testing.
    pub fn test_field(p: u64) -> Result<Self, SroError> {
        if !(3..=(1 << 31)).contains(&p) || !is_prime_u64(p) {
            return Err(SroError::InvalidTestField(p));
        }
        let mut m = 2u64;
        let modulus = loop {
            let candidate = m * p + 1;
            if is_prime_u64(candidate) {
                break candidate;
            }
            m += 2;
        };
        let big_mod = BigUint::from(modulus);
        let big_m = BigUint::from(m);
        let generator = (2u64..)
            .map(|x| BigUint::from(x).modpow(&big_m, &big_mod))
            .find(|g| !g.is_one())
            .expect("a generator exists");
        Ok(Self::from_parts(
            big_mod,
            BigUint::from(p),
            big_m,
            generator,
        ))
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    /// Prime order of the subgroup; the scalar field of the shares.
    pub fn order(&self) -> &BigUint {
        &self.order
    }

    pub fn generator(&self) -> &BigUint {
        &self.generator
    }

    pub fn is_test_field(&self) -> bool {
        self.order.bits() <= 64
    }

    pub fn pow(&self, base: &BigUint, exp: &BigUint) -> BigUint {
        base.modpow(exp, &self.modulus)
    }

    pub fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.modulus
    }

    pub fn g_pow(&self, exp: &BigUint) -> BigUint {
        self.pow(&self.generator, exp)
    }

    /// Membership in the order-`q` subgroup.
    pub fn is_member(&self, x: &BigUint) -> bool {
        !x.is_zero() && x < &self.modulus && self.pow(x, &self.order).is_one()
    }

    /// `x^{-c}` for a subgroup element, using `x^{q - (c mod q)}`.
    pub fn pow_neg(&self, x: &BigUint, c: &BigUint) -> BigUint {
        let e = (&self.order - (c % &self.order)) % &self.order;
        self.pow(x, &e)
    }

    /// Maps slot index `k` into the subgroup with no known discrete log.
    pub fn hash_to_group(&self, k: u64) -> BigUint {
        for ctr in 0u32.. {
            let mut wide = Vec::with_capacity(self.byte_len + 64);
            let mut block = 0u32;
            while wide.len() < self.byte_len + 16 {
                let mut h = Sha512::new();
                h.update(b"bercow/dprf/hash-to-group/");
                h.update(k.to_be_bytes());
                h.update(ctr.to_be_bytes());
                h.update(block.to_be_bytes());
                wide.extend_from_slice(&h.finalize());
                block += 1;
            }
            let y = BigUint::from_bytes_be(&wide) % &self.modulus;
            let candidate = self.pow(&y, &self.cofactor);
            if !candidate.is_zero() && !candidate.is_one() {
                return candidate;
            }
        }
        unreachable!("counter space exhausted")
    }

    /// Fixed-width big-endian encoding of a group element.
    pub fn encode(&self, x: &BigUint) -> Vec<u8> {
        let raw = x.to_bytes_be();
        let mut out = vec![0u8; self.byte_len.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    /// Uniform scalar in `[lo, q)`.
    pub fn random_scalar<R: Rng + ?Sized>(&self, rng: &mut R, lo: u32) -> BigUint {
        rng.gen_biguint_range(&BigUint::from(lo), &self.order)
    }

    /// Multiplicative inverse mod `q`.
    pub fn scalar_inv(&self, x: &BigUint) -> BigUint {
        let two = BigUint::from(2u32);
        x.modpow(&(&self.order - &two), &self.order)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Miller-Rabin with fixed bases; adequate as a test oracle.
    pub(crate) fn probably_prime(n: &BigUint) -> bool {
        let one = BigUint::one();
        let two = BigUint::from(2u32);
        if n < &two {
            return false;
        }
        for small in [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
            let s = BigUint::from(small);
            if n == &s {
                return true;
            }
            if (n % &s).is_zero() {
                return false;
            }
        }
        let n1 = n - &one;
        let mut d = n1.clone();
        let mut r = 0;
        while (&d % &two).is_zero() {
            d /= &two;
            r += 1;
        }
        'bases: for a in [
            2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
        ] {
            let mut x = BigUint::from(a).modpow(&d, n);
            if x == one || x == n1 {
                continue;
            }
            for _ in 1..r {
                x = x.modpow(&two, n);
                if x == n1 {
                    continue 'bases;
                }
            }
            return false;
        }
        true
    }

    #[test]
    fn production_parameters_are_sound() {
        let g = GroupParams::production();
        assert!(probably_prime(g.modulus()));
        assert!(probably_prime(g.order()));
        assert_eq!(g.order().bits(), 256);
        assert_eq!(g.modulus().bits(), 512);
        assert_eq!(&(&g.cofactor * g.order() + 1u32), g.modulus());
        assert!(!g.generator().is_one());
        assert!(g.is_member(g.generator()));
    }

    #[test]
    fn test_field_101() {
        let g = GroupParams::test_field(101).unwrap();
        assert_eq!(g.modulus(), &BigUint::from(607u32));
        assert!(g.is_member(g.generator()));
        assert!(g.is_test_field());
        assert!(GroupParams::test_field(100).is_err());
        assert!(GroupParams::test_field(2).is_err());
    }

    #[test]
    fn hash_to_group_lands_in_subgroup() {
        for g in [
            GroupParams::production(),
            GroupParams::test_field(101).unwrap(),
        ] {
            for k in 0..20 {
                let h = g.hash_to_group(k);
                assert!(g.is_member(&h));
                assert!(!h.is_one());
            }
            assert_ne!(g.hash_to_group(1), g.hash_to_group(2));
        }
    }

    #[test]
    fn pow_neg_inverts() {
        let g = GroupParams::test_field(101).unwrap();
        let x = g.g_pow(&BigUint::from(17u32));
        let c = BigUint::from(12345u32);
        let prod = g.mul(&g.pow(&x, &c), &g.pow_neg(&x, &c));
        assert!(prod.is_one());
    }
}
