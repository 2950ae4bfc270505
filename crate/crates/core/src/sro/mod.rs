//! Secret random oracle: `Reveal`, `Generate` and `Verify` over slot indices.
//!
//! Two interchangeable backends sit behind [`SroHandle`]:
//!
//! * **Seeded hash**: a sealed 32-byte seed (the enclave model). `R(k)` is
//!   `SHA-512(seed || k)` and the proof is `SHA-512(R(k))`.
//! * **Threshold DPRF**: Shamir-shared key with per-node verifiable shares
//!   (see [`dprf`]); any `n - f` valid shares determine `R(k)`.
//!
//! Both backends refuse to reveal anything unless the request carries valid
//! signatures over `k` from at least `n - f` distinct nodes.

pub mod dprf;
pub mod group;
mod signature;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::SeedableRng;
use sha2::{Digest, Sha512};
use thiserror::Error;

use crate::domain::NodeId;
pub use dprf::{DleqProof, DprfKeyMaterial, Share};
pub use group::GroupParams;
pub use signature::{KeyRing, Signature};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SroError {
    #[error("invalid oracle configuration: n = {n}, f = {f} (need n >= 3f + 1 and n >= 1)")]
    InvalidConfig { n: usize, f: usize },
    #[error("signature set has {valid} valid signers, {required} required")]
    InvalidSignatureSet { valid: usize, required: usize },
    #[error("only {valid} valid shares, {required} required")]
    InsufficientValidShares { valid: usize, required: usize },
    #[error("node {0} appears twice in the signature set")]
    DuplicateSigner(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} is not a usable prime test field")]
    InvalidTestField(u64),
    #[error("field of order {order} cannot host {n} distinct share points")]
    FieldTooSmall { n: usize, order: String },
    #[error("operation requires the threshold backend")]
    BackendMismatch,
}

/// Scalar field used by the threshold backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DprfField {
    /// 256-bit subgroup of a 512-bit prime field.
    Production,
    /// Small prime-order subgroup for exhaustive tests.
    Test(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    SeededHash,
    ThresholdDprf(DprfField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SroConfig {
    pub n: usize,
    pub f: usize,
    pub backend: Backend,
}

impl SroConfig {
    pub fn new(n: usize, f: usize, backend: Backend) -> Result<Self, SroError> {
        if n == 0 || n < 3 * f + 1 {
            return Err(SroError::InvalidConfig { n, f });
        }
        Ok(SroConfig { n, f, backend })
    }

    pub fn quorum(&self) -> usize {
        self.n - self.f
    }
}

/// A 64-byte oracle output.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct RandomValue(pub [u8; 64]);

impl RandomValue {
    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }

    /// First 32 bytes, used as a per-slot seed.
    pub fn seed32(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out.copy_from_slice(&self.0[..32]);
        out
    }

    pub fn to_hex(&self) -> String {
        to_hex(&self.0)
    }
}

impl fmt::Debug for RandomValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RandomValue({}..)", &self.to_hex()[..16])
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevealRequest {
    pub k: u64,
    signatures: Vec<Signature>,
}

impl RevealRequest {
    pub fn new(k: u64, signatures: Vec<Signature>) -> Result<Self, SroError> {
        let mut seen = BTreeSet::new();
        for s in &signatures {
            if !seen.insert(s.node) {
                return Err(SroError::DuplicateSigner(s.node));
            }
        }
        Ok(RevealRequest { k, signatures })
    }

    pub fn signatures(&self) -> &[Signature] {
        &self.signatures
    }
}

/// Sealed seed of the hash backend.
#[derive(Clone)]
pub struct SeededHashState {
    seed: [u8; 32],
}

impl SeededHashState {
    fn rand(&self, k: u64) -> RandomValue {
        let mut h = Sha512::new();
        h.update(self.seed);
        h.update(k.to_be_bytes());
        RandomValue(h.finalize().into())
    }
}

#[derive(Clone)]
enum BackendState {
    Seeded(SeededHashState),
    Threshold(DprfKeyMaterial),
}

/// Publicly checkable evidence for an oracle output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Proof {
    /// `HASH(R(k))`.
    Seeded {
        digest: [u8; 64],
    },
    Threshold(ThresholdProof),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdProof {
    pub group: Arc<GroupParams>,
    pub quorum: usize,
    /// Per-node public keys `C_i = g^{s_i}`.
    pub commitments: Vec<BigUint>,
    /// Shares from a reveal transcript; empty until attached.
    pub shares: Vec<Share>,
}

impl Proof {
    /// Attaches the shares a reveal used. No-op for the seeded backend.
    pub fn with_shares(self, shares: Vec<Share>) -> Proof {
        match self {
            Proof::Threshold(mut p) => {
                p.shares = shares;
                Proof::Threshold(p)
            }
            other => other,
        }
    }
}

/// `Verify(k, p, r)`.
pub fn verify(k: u64, proof: &Proof, r: &RandomValue) -> bool {
    match proof {
        Proof::Seeded { digest } => {
            let got: [u8; 64] = Sha512::digest(r.0).into();
            &got == digest
        }
        Proof::Threshold(p) => {
            match dprf::combine(&p.group, p.quorum, &p.commitments, k, &p.shares) {
                Ok((value, _)) => value == *r,
                Err(_) => false,
            }
        }
    }
}

/// Handle to an initialized oracle. Immutable after [`SroHandle::init`].
#[derive(Clone)]
pub struct SroHandle {
    config: SroConfig,
    keys: KeyRing,
    state: BackendState,
}

impl fmt::Debug for SroHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SroHandle")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn derive(tag: &[u8], rng_seed: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha512::new();
    h.update(tag);
    h.update(rng_seed);
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize()[..32]);
    out
}

impl SroHandle {
    /// Runs the (trusted, local) setup. All state is a function of `rng_seed`.
    pub fn init(config: SroConfig, rng_seed: [u8; 32]) -> Result<Self, SroError> {
        let config = SroConfig::new(config.n, config.f, config.backend)?;
        let keys = KeyRing::derive(&derive(b"bercow/sro/node-keys", &rng_seed), config.n);
        let state = match config.backend {
            Backend::SeededHash => BackendState::Seeded(SeededHashState {
                seed: derive(b"bercow/sro/seed", &rng_seed),
            }),
            Backend::ThresholdDprf(field) => {
                let group = match field {
                    DprfField::Production => GroupParams::production(),
                    DprfField::Test(p) => GroupParams::test_field(p)?,
                };
                let mut rng =
                    rand_chacha::ChaCha20Rng::from_seed(derive(b"bercow/sro/dealer", &rng_seed));
                BackendState::Threshold(DprfKeyMaterial::generate(
                    group,
                    config.n,
                    config.quorum(),
                    &mut rng,
                )?)
            }
        };
        Ok(SroHandle {
            config,
            keys,
            state,
        })
    }

    pub fn config(&self) -> &SroConfig {
        &self.config
    }

    pub fn keys(&self) -> &KeyRing {
        &self.keys
    }

    /// Simulated node `node` signing slot `k`.
    pub fn sign(&self, node: NodeId, k: u64) -> Signature {
        self.keys.sign(node, k)
    }

    /// Certificate from the first `n - f` nodes.
    pub fn certificate(&self, k: u64) -> Vec<Signature> {
        self.keys.certificate(k, 0..self.config.quorum())
    }

    fn check_signatures(&self, k: u64, sigs: &[Signature]) -> Result<(), SroError> {
        let valid = self.keys.count_valid(k, sigs);
        let required = self.config.quorum();
        if valid < required {
            return Err(SroError::InvalidSignatureSet { valid, required });
        }
        Ok(())
    }

    pub fn reveal(&self, req: &RevealRequest) -> Result<RandomValue, SroError> {
        self.reveal_with_transcript(req).map(|(r, _)| r)
    }

    /// Reveal returning the shares that were combined (empty for the seeded
    /// backend).
    pub fn reveal_with_transcript(
        &self,
        req: &RevealRequest,
    ) -> Result<(RandomValue, Vec<Share>), SroError> {
        self.reveal_intercepted(req, |_, s| Some(s))
    }

    /// Reveal in which every produced share passes through `intercept`
    /// before reaching the aggregator; returning `None` drops the share.
    /// Models Byzantine nodes and lossy delivery.
    pub fn reveal_intercepted<F>(
        &self,
        req: &RevealRequest,
        mut intercept: F,
    ) -> Result<(RandomValue, Vec<Share>), SroError>
    where
        F: FnMut(NodeId, Share) -> Option<Share>,
    {
        self.check_signatures(req.k, &req.signatures)?;
        match &self.state {
            BackendState::Seeded(s) => Ok((s.rand(req.k), Vec::new())),
            BackendState::Threshold(km) => {
                let h = km.group.hash_to_group(req.k);
                let quorum = self.config.quorum();
                let mut valid: Vec<Share> = Vec::with_capacity(quorum);
                for node in 0..self.config.n {
                    let share = km.share_with_base(node, req.k, &h)?;
                    if let Some(s) = intercept(node, share) {
                        let fresh = !valid.iter().any(|v| v.node == s.node);
                        let ok = km.commitments.get(s.node).is_some_and(|c| {
                            dprf::share_is_valid_with_base(&km.group, req.k, &h, c, &s)
                        });
                        if fresh && ok {
                            valid.push(s);
                        }
                    }
                    if valid.len() == quorum {
                        break;
                    }
                }
                if valid.len() < quorum {
                    return Err(SroError::InsufficientValidShares {
                        valid: valid.len(),
                        required: quorum,
                    });
                }
                let refs: Vec<&Share> = valid.iter().collect();
                let element = dprf::combine_elements(&km.group, &refs);
                Ok((dprf::output_from_element(&km.group, &element), valid))
            }
        }
    }

    /// Node-side `Produce(k, signatures)`.
    pub fn produce_share(
        &self,
        node: NodeId,
        k: u64,
        signatures: &[Signature],
    ) -> Result<Share, SroError> {
        let BackendState::Threshold(km) = &self.state else {
            return Err(SroError::BackendMismatch);
        };
        if node >= self.config.n {
            return Err(SroError::UnknownNode(node));
        }
        self.check_signatures(k, signatures)?;
        km.share_for(node, k)
    }

    /// `Valid(k, node, share)` against this oracle's commitments.
    pub fn share_is_valid(&self, k: u64, node: NodeId, share: &Share) -> bool {
        match &self.state {
            BackendState::Threshold(km) => match km.commitments.get(node) {
                Some(c) => share.node == node && dprf::share_is_valid(&km.group, k, c, share),
                None => false,
            },
            BackendState::Seeded(_) => false,
        }
    }

    /// `Generate(k)`. For the threshold backend this is the set of public
    /// commitments; attach the reveal transcript with [`Proof::with_shares`].
    pub fn generate_proof(&self, k: u64) -> Proof {
        match &self.state {
            BackendState::Seeded(s) => Proof::Seeded {
                digest: Sha512::digest(s.rand(k).0).into(),
            },
            BackendState::Threshold(km) => Proof::Threshold(ThresholdProof {
                group: km.group.clone(),
                quorum: km.quorum,
                commitments: km.commitments.clone(),
                shares: Vec::new(),
            }),
        }
    }

    /// `Verify` that also pins the proof's public keys to this oracle.
    pub fn verify(&self, k: u64, proof: &Proof, r: &RandomValue) -> bool {
        match (&self.state, proof) {
            (BackendState::Threshold(km), Proof::Threshold(p)) => {
                p.commitments == km.commitments && p.quorum == km.quorum && verify(k, proof, r)
            }
            (BackendState::Seeded(_), Proof::Seeded { .. }) => verify(k, proof, r),
            _ => false,
        }
    }

    /// Key material of the threshold backend, if any.
    pub fn dprf_material(&self) -> Option<&DprfKeyMaterial> {
        match &self.state {
            BackendState::Threshold(km) => Some(km),
            BackendState::Seeded(_) => None,
        }
    }
}
