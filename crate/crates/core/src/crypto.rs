//! Hashing and the two signature backends.
//!
//! `Scheme::Ed25519` is the real asymmetric scheme. `Scheme::Test` is a keyed
//! hash over the public key: anyone holding the public key can produce a valid
//! signature, so it only makes sense inside simulations where nobody forges.
//! Both are deterministic, which keeps whole simulations reproducible.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use sha2::{Digest as _, Sha256};

use crate::types::Signature;

/// 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Scheme {
    Ed25519,
    #[default]
    Test,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ed25519 => "real",
            Scheme::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "real" | "ed25519" => Some(Scheme::Ed25519),
            "test" => Some(Scheme::Test),
            _ => None,
        }
    }

    pub fn verify(self, public: &[u8; 32], msg: &[u8], sig: &Signature) -> bool {
        match self {
            Scheme::Ed25519 => {
                let Ok(vk) = VerifyingKey::from_bytes(public) else {
                    return false;
                };
                let Ok(sig) = ed25519_dalek::Signature::from_slice(&sig.0) else {
                    return false;
                };
                vk.verify(msg, &sig).is_ok()
            }
            Scheme::Test => test_mac(public, msg).verify_slice(&sig.0).is_ok(),
        }
    }
}

fn test_mac(public: &[u8; 32], msg: &[u8]) -> Hmac<Sha256> {
    let mut mac = Hmac::<Sha256>::new_from_slice(public).expect("hmac accepts any key length");
    mac.update(msg);
    mac
}

#[derive(Clone)]
pub struct Keypair {
    scheme: Scheme,
    secret: [u8; 32],
    public: [u8; 32],
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair")
            .field("scheme", &self.scheme)
            .field("public", &hex::encode(&self.public[..4]))
            .finish_non_exhaustive()
    }
}

impl Keypair {
    pub fn from_secret(scheme: Scheme, secret: [u8; 32]) -> Self {
        let public = match scheme {
            Scheme::Ed25519 => SigningKey::from_bytes(&secret).verifying_key().to_bytes(),
            Scheme::Test => {
                let mut h = Sha256::new();
                h.update(b"blockgraph/test-scheme/public");
                h.update(secret);
                h.finalize().into()
            }
        };
        Self {
            scheme,
            secret,
            public,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn public(&self) -> [u8; 32] {
        self.public
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        match self.scheme {
            Scheme::Ed25519 => {
                let sk = SigningKey::from_bytes(&self.secret);
                Signature(sk.sign(msg).to_bytes().to_vec())
            }
            Scheme::Test => Signature(test_mac(&self.public, msg).finalize().into_bytes().to_vec()),
        }
    }
}

/// Same seed, same keypair.
pub fn deterministic_keygen(scheme: Scheme, seed: u64) -> Keypair {
    let mut h = Sha256::new();
    h.update(b"blockgraph/keygen");
    h.update(seed.to_be_bytes());
    Keypair::from_secret(scheme, h.finalize().into())
}
