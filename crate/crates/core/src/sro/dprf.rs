//! Discrete-log threshold distributed PRF.
//!
//! The master secret `s` is Shamir-shared with a degree `quorum - 1`
//! polynomial over `Z_q`. For slot `k`, node `i` publishes
//! `sigma_i = H(k)^{s_i}` with a Chaum-Pedersen proof that
//! `log_g C_i = log_{H(k)} sigma_i`, where `C_i = g^{s_i}` is its public
//! commitment. Any quorum of valid shares interpolates `H(k)^s` in the
//! exponent; the oracle output is a hash of that group element.

use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::Rng;
use sha2::{Digest, Sha512};

use super::group::GroupParams;
use super::{RandomValue, SroError};
use crate::domain::NodeId;

/// Chaum-Pedersen equality-of-discrete-logs proof.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DleqProof {
    /// Fiat-Shamir challenge, kept at full hash width.
    pub challenge: BigUint,
    pub response: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub node: NodeId,
    pub value: BigUint,
    pub proof: DleqProof,
}

/// One node's secret share. Node `i` evaluates the polynomial at `x = i + 1`.
#[derive(Clone)]
pub struct DprfNode {
    pub id: NodeId,
    share: BigUint,
}

impl std::fmt::Debug for DprfNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DprfNode")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

/// Output of the key-generation ceremony. The master secret is discarded.
#[derive(Debug, Clone)]
pub struct DprfKeyMaterial {
    pub group: Arc<GroupParams>,
    pub quorum: usize,
    pub commitments: Vec<BigUint>,
    pub nodes: Vec<DprfNode>,
}

pub fn eval_point(node: NodeId) -> BigUint {
    BigUint::from(node as u64 + 1)
}

/// Evaluates `coeffs[0] + coeffs[1] x + ...` mod `modulus`.
pub fn eval_poly(coeffs: &[BigUint], x: &BigUint, modulus: &BigUint) -> BigUint {
    coeffs
        .iter()
        .rev()
        .fold(BigUint::zero(), |acc, c| (acc * x + c) % modulus)
}

/// Lagrange coefficients at zero for distinct points `xs` in a prime field.
pub fn lagrange_at_zero(xs: &[BigUint], modulus: &BigUint) -> Vec<BigUint> {
    let two = BigUint::from(2u32);
    xs.iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut num = BigUint::one();
            let mut den = BigUint::one();
            for (j, xj) in xs.iter().enumerate() {
                if i == j {
                    continue;
                }
                num = num * xj % modulus;
                // xj - xi mod p
                let diff = (xj + modulus - (xi % modulus)) % modulus;
                den = den * diff % modulus;
            }
            let den_inv = den.modpow(&(modulus - &two), modulus);
            num * den_inv % modulus
        })
        .collect()
}

impl DprfKeyMaterial {
    /// Trusted dealer: samples the polynomial and hands out shares.
    pub fn generate<R: Rng + ?Sized>(
        group: GroupParams,
        n: usize,
        quorum: usize,
        rng: &mut R,
    ) -> Result<Self, SroError> {
        if BigUint::from(n as u64) >= *group.order() {
            return Err(SroError::FieldTooSmall {
                n,
                order: group.order().to_string(),
            });
        }
        let order = group.order().clone();
        let mut coeffs = Vec::with_capacity(quorum);
        coeffs.push(group.random_scalar(rng, 1));
        for _ in 1..quorum {
            coeffs.push(group.random_scalar(rng, 0));
        }
        let nodes: Vec<DprfNode> = (0..n)
            .map(|id| DprfNode {
                id,
                share: eval_poly(&coeffs, &eval_point(id), &order),
            })
            .collect();
        let commitments = nodes.iter().map(|nd| group.g_pow(&nd.share)).collect();
        Ok(DprfKeyMaterial {
            group: Arc::new(group),
            quorum,
            commitments,
            nodes,
        })
    }

    /// `Produce` without the signature gate; callers check signatures first.
    pub(crate) fn share_for(&self, node: NodeId, k: u64) -> Result<Share, SroError> {
        self.share_with_base(node, k, &self.group.hash_to_group(k))
    }

    /// As [`Self::share_for`] with `H(k)` precomputed.
    pub(crate) fn share_with_base(
        &self,
        node: NodeId,
        k: u64,
        h: &BigUint,
    ) -> Result<Share, SroError> {
        let nd = self.nodes.get(node).ok_or(SroError::UnknownNode(node))?;
        Ok(produce(&self.group, nd, &self.commitments[node], k, h))
    }

    /// Raw share exponent; exposed for exhaustive small-field tests.
    #[doc(hidden)]
    pub fn secret_share_of(&self, node: NodeId) -> Option<&BigUint> {
        self.nodes.get(node).map(|nd| &nd.share)
    }
}

#[allow(clippy::too_many_arguments)]
fn challenge(
    group: &GroupParams,
    k: u64,
    node: NodeId,
    h: &BigUint,
    commitment: &BigUint,
    value: &BigUint,
    a1: &BigUint,
    a2: &BigUint,
) -> BigUint {
    let mut hasher = Sha512::new();
    hasher.update(b"bercow/dprf/dleq/");
    hasher.update(k.to_be_bytes());
    hasher.update((node as u64).to_be_bytes());
    for x in [group.generator(), h, commitment, value, a1, a2] {
        hasher.update(group.encode(x));
    }
    BigUint::from_bytes_be(&hasher.finalize())
}

fn produce(
    group: &GroupParams,
    node: &DprfNode,
    commitment: &BigUint,
    k: u64,
    h: &BigUint,
) -> Share {
    let value = group.pow(h, &node.share);
    // Deterministic nonce derived from the secret share and the slot.
    let nonce = {
        let mut hasher = Sha512::new();
        hasher.update(b"bercow/dprf/nonce/");
        hasher.update(node.share.to_bytes_be());
        hasher.update(k.to_be_bytes());
        BigUint::from_bytes_be(&hasher.finalize()) % group.order()
    };
    let a1 = group.g_pow(&nonce);
    let a2 = group.pow(h, &nonce);
    let c = challenge(group, k, node.id, h, commitment, &value, &a1, &a2);
    let response = (nonce + &c * &node.share) % group.order();
    Share {
        node: node.id,
        value,
        proof: DleqProof {
            challenge: c,
            response,
        },
    }
}

/// `Valid(k, i, share)`: checks the share against node `i`'s commitment.
pub fn share_is_valid(group: &GroupParams, k: u64, commitment: &BigUint, share: &Share) -> bool {
    share_is_valid_with_base(group, k, &group.hash_to_group(k), commitment, share)
}

/// As [`share_is_valid`] with `H(k)` precomputed.
pub fn share_is_valid_with_base(
    group: &GroupParams,
    k: u64,
    h: &BigUint,
    commitment: &BigUint,
    share: &Share,
) -> bool {
    if !group.is_member(&share.value) || share.proof.response >= *group.order() {
        return false;
    }
    let c = &share.proof.challenge;
    let z = &share.proof.response;
    let a1 = group.mul(&group.g_pow(z), &group.pow_neg(commitment, c));
    let a2 = group.mul(&group.pow(h, z), &group.pow_neg(&share.value, c));
    challenge(group, k, share.node, h, commitment, &share.value, &a1, &a2) == *c
}

/// Interpolates `H(k)^s` in the exponent from exactly `quorum` shares with
/// distinct nodes. Shares must already be validated.
pub fn combine_elements(group: &GroupParams, shares: &[&Share]) -> BigUint {
    let xs: Vec<BigUint> = shares.iter().map(|s| eval_point(s.node)).collect();
    let lambdas = lagrange_at_zero(&xs, group.order());
    shares
        .iter()
        .zip(&lambdas)
        .fold(BigUint::one(), |acc, (s, l)| {
            group.mul(&acc, &group.pow(&s.value, l))
        })
}

pub fn output_from_element(group: &GroupParams, element: &BigUint) -> RandomValue {
    let mut hasher = Sha512::new();
    hasher.update(b"bercow/dprf/output/");
    hasher.update(group.encode(element));
    RandomValue(hasher.finalize().into())
}

/// `Combine`: validates shares, keeps the first `quorum` valid ones from
/// distinct nodes and returns the oracle value.
pub fn combine(
    group: &GroupParams,
    quorum: usize,
    commitments: &[BigUint],
    k: u64,
    shares: &[Share],
) -> Result<(RandomValue, Vec<Share>), SroError> {
    let h = group.hash_to_group(k);
    let mut used: Vec<&Share> = Vec::with_capacity(quorum);
    for s in shares {
        if used.len() == quorum {
            break;
        }
        if used.iter().any(|u| u.node == s.node) {
            continue;
        }
        let Some(commitment) = commitments.get(s.node) else {
            continue;
        };
        if share_is_valid_with_base(group, k, &h, commitment, s) {
            used.push(s);
        }
    }
    if used.len() < quorum {
        return Err(SroError::InsufficientValidShares {
            valid: used.len(),
            required: quorum,
        });
    }
    let element = combine_elements(group, &used);
    Ok((
        output_from_element(group, &element),
        used.into_iter().cloned().collect(),
    ))
}
