//! Node "signatures" over slot indices, modeled as HMAC tags under per-node
//! keys that the oracle (the verifier) also holds.

use std::collections::BTreeSet;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::domain::NodeId;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub node: NodeId,
    pub tag: [u8; 32],
}

#[derive(Clone)]
pub struct KeyRing {
    keys: Vec<[u8; 32]>,
}

impl std::fmt::Debug for KeyRing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyRing")
            .field("nodes", &self.keys.len())
            .finish_non_exhaustive()
    }
}

fn mac(key: &[u8]) -> HmacSha256 {
    HmacSha256::new_from_slice(key).expect("hmac accepts any key length")
}

impl KeyRing {
    pub fn derive(seed: &[u8; 32], n: usize) -> Self {
        let keys = (0..n)
            .map(|i| {
                let mut m = mac(seed);
                m.update(b"bercow/node-key/");
                m.update(&(i as u64).to_be_bytes());
                m.finalize().into_bytes().into()
            })
            .collect();
        KeyRing { keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn tagger(&self, node: NodeId, k: u64) -> Option<HmacSha256> {
        let key = self.keys.get(node)?;
        let mut m = mac(key);
        m.update(b"bercow/slot/");
        m.update(&k.to_be_bytes());
        Some(m)
    }

    /// Signs slot index `k` as `node`. Panics if `node` is out of range.
    pub fn sign(&self, node: NodeId, k: u64) -> Signature {
        let m = self
            .tagger(node, k)
            .unwrap_or_else(|| panic!("node {node} has no key"));
        Signature {
            node,
            tag: m.finalize().into_bytes().into(),
        }
    }

    pub fn verify(&self, sig: &Signature, k: u64) -> bool {
        match self.tagger(sig.node, k) {
            Some(m) => m.verify_slice(&sig.tag).is_ok(),
            None => false,
        }
    }

    /// Number of distinct nodes with a valid signature over `k`.
    pub fn count_valid(&self, k: u64, sigs: &[Signature]) -> usize {
        sigs.iter()
            .filter(|s| self.verify(s, k))
            .map(|s| s.node)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn certificate<I: IntoIterator<Item = NodeId>>(&self, k: u64, nodes: I) -> Vec<Signature> {
        nodes.into_iter().map(|i| self.sign(i, k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures_bind_node_and_slot() {
        let ring = KeyRing::derive(&[1; 32], 4);
        let s = ring.sign(2, 7);
        assert!(ring.verify(&s, 7));
        assert!(!ring.verify(&s, 8));
        let forged = Signature {
            node: 3,
            tag: s.tag,
        };
        assert!(!ring.verify(&forged, 7));
        assert!(!ring.verify(
            &Signature {
                node: 9,
                tag: s.tag
            },
            7
        ));
    }

    #[test]
    fn duplicates_count_once() {
        let ring = KeyRing::derive(&[1; 32], 4);
        let s = ring.sign(0, 1);
        assert_eq!(ring.count_valid(1, &[s.clone(), s.clone(), s]), 1);
        assert_eq!(ring.count_valid(1, &ring.certificate(1, 0..3)), 3);
    }
}
