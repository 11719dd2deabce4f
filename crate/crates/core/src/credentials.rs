//! Anonymous-credential lifecycle: the utility issues partially blind
//! signatures over blinded pseudonym keys, ESUs unblind them into tokens and
//! later sign charging requests under the pseudonym key.
//!
//! The partially blind scheme is the Abe-Okamoto construction over the
//! ristretto255 group. The common message `TS || ID_g` is hashed into the
//! public tag point `z`, so a token only verifies against the exact date and
//! community it was issued for. Identity and request signatures are plain
//! Schnorr over the same group.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha512};
use thiserror::Error;

use crate::address::Address;
use crate::encoding::{DecodeError, Reader, Writer};

const DOMAIN_TAG_POINT: &[u8] = b"chargecoord/pbs/tag-point/v1";
const DOMAIN_PBS_CHALLENGE: &[u8] = b"chargecoord/pbs/challenge/v1";
const DOMAIN_SCHNORR: &[u8] = b"chargecoord/schnorr/v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CredentialError {
    #[error("identity is not registered with the issuer")]
    UnknownIdentity,
    #[error("identity signature over the blinded message is invalid")]
    BadIdentitySignature,
    #[error("token quota of {0} per identity per period exhausted")]
    QuotaExceeded(u32),
    #[error("unblinded signature failed verification (mismatched blinding state?)")]
    UnblindFailed,
    #[error("malformed encoding: {0}")]
    Malformed(#[from] DecodeError),
}

fn random_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    let mut wide = [0u8; 64];
    rng.fill_bytes(&mut wide);
    Scalar::from_bytes_mod_order_wide(&wide)
}

fn hash_to_point(domain: &[u8], data: &[u8]) -> RistrettoPoint {
    let mut h = Sha512::new();
    h.update(domain);
    h.update(data);
    RistrettoPoint::from_uniform_bytes(&h.finalize().into())
}

fn hash_to_scalar(domain: &[u8], parts: &[&[u8]]) -> Scalar {
    let mut h = Sha512::new();
    h.update(domain);
    for p in parts {
        h.update((p.len() as u32).to_be_bytes());
        h.update(p);
    }
    Scalar::from_bytes_mod_order_wide(&h.finalize().into())
}

/// Date and community identifier forming the signer-visible common message
/// `m0 = TS || ID_g`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommonMessage {
    pub date: NaiveDate,
    pub community: String,
}

impl CommonMessage {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.i32(days_from_epoch(self.date));
        w.bytes(self.community.as_bytes());
        w.finish()
    }

    pub fn encode(&self, w: &mut Writer) {
        w.i32(days_from_epoch(self.date));
        w.bytes(self.community.as_bytes());
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let days = r.i32()?;
        let date = date_from_days(days).ok_or(DecodeError::InvalidField("date"))?;
        let community = String::from_utf8(r.bytes()?)
            .map_err(|_| DecodeError::InvalidField("community"))?;
        Ok(Self { date, community })
    }

    /// Tag point z = H(m0), the "info" component of the blind signature.
    fn tag_point(&self) -> RistrettoPoint {
        hash_to_point(DOMAIN_TAG_POINT, &self.canonical_bytes())
    }
}

fn days_from_epoch(d: NaiveDate) -> i32 {
    (d - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days() as i32
}

fn date_from_days(days: i32) -> Option<NaiveDate> {
    NaiveDate::from_ymd_opt(1970, 1, 1)
        .unwrap()
        .checked_add_signed(chrono::Duration::days(days as i64))
}

/// The utility's long-term signing key pair (P_tau, S_tau).
#[derive(Clone)]
pub struct UtilityKeyPair {
    pub secret: Scalar,
    pub public: RistrettoPoint,
}

impl UtilityKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = random_scalar(rng);
        Self {
            public: RistrettoPoint::mul_base(&secret),
            secret,
        }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.to_bytes()
    }

    pub fn public_bytes(&self) -> [u8; 32] {
        self.public.compress().to_bytes()
    }

    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Option<Self> {
        let secret = Option::<Scalar>::from(Scalar::from_canonical_bytes(*bytes))?;
        Some(Self {
            public: RistrettoPoint::mul_base(&secret),
            secret,
        })
    }

    pub fn address(&self) -> Address {
        Address::from_public_key_bytes(&self.public_bytes())
    }
}

/// A single-use pseudonym key pair; the address is the truncated hash of the
/// compressed public key.
#[derive(Clone)]
pub struct PseudonymKeyPair {
    pub secret: Scalar,
    pub public: RistrettoPoint,
}

impl PseudonymKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = random_scalar(rng);
        Self {
            public: RistrettoPoint::mul_base(&secret),
            secret,
        }
    }

    pub fn public_bytes(&self) -> [u8; 32] {
        self.public.compress().to_bytes()
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.to_bytes()
    }

    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Option<Self> {
        let secret = Option::<Scalar>::from(Scalar::from_canonical_bytes(*bytes))?;
        Some(Self {
            public: RistrettoPoint::mul_base(&secret),
            secret,
        })
    }

    pub fn address(&self) -> Address {
        Address::from_public_key_bytes(&self.public_bytes())
    }
}

/// Signer's first move: commitments (a, b) for one issuance session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignerCommitment {
    a: CompressedRistretto,
    b: CompressedRistretto,
}

impl SignerCommitment {
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(self.a.as_bytes());
        out[32..].copy_from_slice(self.b.as_bytes());
        out
    }
}

/// Signer-side session secrets between commit and respond.
pub struct SignerSession {
    u: Scalar,
    s: Scalar,
    d: Scalar,
    common: CommonMessage,
}

/// The requester's blinded challenge e, the only message the signer sees
/// about the pseudonym key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlindedChallenge(pub(crate) Scalar);

impl BlindedChallenge {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }
}

/// Requester secrets held between `blind` and `unblind`; single-use,
/// consumed by value.
pub struct BlindingState {
    t1: Scalar,
    t2: Scalar,
    t3: Scalar,
    t4: Scalar,
    pseudonym_pk: RistrettoPoint,
    utility_pk: RistrettoPoint,
    common: CommonMessage,
}

/// Signer's response to the blinded challenge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssuerResponse {
    r: Scalar,
    c: Scalar,
    s: Scalar,
    d: Scalar,
}

impl IssuerResponse {
    pub fn to_bytes(&self) -> [u8; 128] {
        let mut out = [0u8; 128];
        out[..32].copy_from_slice(&self.r.to_bytes());
        out[32..64].copy_from_slice(&self.c.to_bytes());
        out[64..96].copy_from_slice(&self.s.to_bytes());
        out[96..].copy_from_slice(&self.d.to_bytes());
        out
    }
}

/// The unblinded partially blind signature (rho, omega, sigma, delta).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSignature {
    pub rho: [u8; 32],
    pub omega: [u8; 32],
    pub sigma: [u8; 32],
    pub delta: [u8; 32],
}

/// A charging token: PBS over a pseudonym public key, bound to the common
/// message it was issued under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub signature: TokenSignature,
    pub common: CommonMessage,
}

impl Token {
    pub fn encode(&self, w: &mut Writer) {
        w.fixed(&self.signature.rho);
        w.fixed(&self.signature.omega);
        w.fixed(&self.signature.sigma);
        w.fixed(&self.signature.delta);
        self.common.encode(w);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            signature: TokenSignature {
                rho: r.fixed()?,
                omega: r.fixed()?,
                sigma: r.fixed()?,
                delta: r.fixed()?,
            },
            common: CommonMessage::decode(r)?,
        })
    }
}

/// Plain Schnorr signature (R, s), used for both long-term identity
/// signatures and per-request pseudonym signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchnorrSignature {
    pub nonce_point: [u8; 32],
    pub response: [u8; 32],
}

impl SchnorrSignature {
    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(&self.nonce_point);
        out[32..].copy_from_slice(&self.response);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 64 {
            return None;
        }
        Some(Self {
            nonce_point: bytes[..32].try_into().unwrap(),
            response: bytes[32..].try_into().unwrap(),
        })
    }
}

fn schnorr_sign<R: RngCore + CryptoRng>(
    rng: &mut R,
    secret: &Scalar,
    public: &RistrettoPoint,
    payload: &[u8],
) -> SchnorrSignature {
    let k = random_scalar(rng);
    let nonce_point = RistrettoPoint::mul_base(&k).compress();
    let challenge = hash_to_scalar(
        DOMAIN_SCHNORR,
        &[
            nonce_point.as_bytes(),
            public.compress().as_bytes(),
            payload,
        ],
    );
    let response = k + challenge * secret;
    SchnorrSignature {
        nonce_point: nonce_point.to_bytes(),
        response: response.to_bytes(),
    }
}

fn schnorr_verify(public_bytes: &[u8; 32], payload: &[u8], sig: &SchnorrSignature) -> bool {
    let Some(public) = CompressedRistretto(*public_bytes).decompress() else {
        return false;
    };
    let Some(nonce_point) = CompressedRistretto(sig.nonce_point).decompress() else {
        return false;
    };
    let Some(response) = Option::<Scalar>::from(Scalar::from_canonical_bytes(sig.response)) else {
        return false;
    };
    let challenge = hash_to_scalar(
        DOMAIN_SCHNORR,
        &[&sig.nonce_point, public_bytes, payload],
    );
    RistrettoPoint::mul_base(&response) == nonce_point + public * challenge
}

/// Signs `payload` under the pseudonym key.
pub fn sign_request<R: RngCore + CryptoRng>(
    rng: &mut R,
    pseudonym: &PseudonymKeyPair,
    payload: &[u8],
) -> SchnorrSignature {
    schnorr_sign(rng, &pseudonym.secret, &pseudonym.public, payload)
}

/// Verifies a request signature against a compressed public key.
pub fn verify_request(public_bytes: &[u8; 32], payload: &[u8], sig: &SchnorrSignature) -> bool {
    schnorr_verify(public_bytes, payload, sig)
}

/// Signs arbitrary bytes with the utility's long-term key, e.g. load posts.
pub fn sign_utility_payload<R: RngCore + CryptoRng>(
    rng: &mut R,
    utility: &UtilityKeyPair,
    payload: &[u8],
) -> SchnorrSignature {
    schnorr_sign(rng, &utility.secret, &utility.public, payload)
}

/// Signs the blinded challenge with the ESU's long-term identity key.
pub fn sign_identity<R: RngCore + CryptoRng>(
    rng: &mut R,
    identity: &UtilityKeyPair,
    challenge: &BlindedChallenge,
) -> SchnorrSignature {
    schnorr_sign(rng, &identity.secret, &identity.public, &challenge.to_bytes())
}

/// Requester side of the blind step: folds the signer commitment, the
/// pseudonym key, and the common message into a blinded challenge.
pub fn blind<R: RngCore + CryptoRng>(
    rng: &mut R,
    pseudonym_pk: &RistrettoPoint,
    utility_pk: &RistrettoPoint,
    common: &CommonMessage,
    commitment: &SignerCommitment,
) -> Option<(BlindedChallenge, BlindingState)> {
    let a = commitment.a.decompress()?;
    let b = commitment.b.decompress()?;
    let z = common.tag_point();

    let (t1, t2, t3, t4) = (
        random_scalar(rng),
        random_scalar(rng),
        random_scalar(rng),
        random_scalar(rng),
    );
    let alpha = a + RistrettoPoint::mul_base(&t1) + utility_pk * t2;
    let beta = b + RistrettoPoint::mul_base(&t3) + z * t4;

    let epsilon = challenge_hash(&alpha, &beta, &z, pseudonym_pk, common);
    let e = epsilon - t2 - t4;

    let state = BlindingState {
        t1,
        t2,
        t3,
        t4,
        pseudonym_pk: *pseudonym_pk,
        utility_pk: *utility_pk,
        common: common.clone(),
    };
    Some((BlindedChallenge(e), state))
}

fn challenge_hash(
    alpha: &RistrettoPoint,
    beta: &RistrettoPoint,
    z: &RistrettoPoint,
    message_pk: &RistrettoPoint,
    common: &CommonMessage,
) -> Scalar {
    hash_to_scalar(
        DOMAIN_PBS_CHALLENGE,
        &[
            alpha.compress().as_bytes(),
            beta.compress().as_bytes(),
            z.compress().as_bytes(),
            message_pk.compress().as_bytes(),
            &common.canonical_bytes(),
        ],
    )
}

/// Unblinds the signer response into a token and checks it verifies; a
/// response produced against a different session fails here.
pub fn unblind(
    response: &IssuerResponse,
    state: BlindingState,
) -> Result<Token, CredentialError> {
    let rho = response.r + state.t1;
    let omega = response.c + state.t2;
    let sigma = response.s + state.t3;
    let delta = response.d + state.t4;

    let token = Token {
        signature: TokenSignature {
            rho: rho.to_bytes(),
            omega: omega.to_bytes(),
            sigma: sigma.to_bytes(),
            delta: delta.to_bytes(),
        },
        common: state.common.clone(),
    };

    let pseudonym_bytes = state.pseudonym_pk.compress().to_bytes();
    let utility_bytes = state.utility_pk.compress().to_bytes();
    if !verify_token(&token, &pseudonym_bytes, &utility_bytes, &state.common) {
        return Err(CredentialError::UnblindFailed);
    }
    Ok(token)
}

/// Checks the PBS verification equation: omega + delta must equal the
/// challenge hash recomputed from (g^rho y^omega, g^sigma z^delta).
pub fn verify_token(
    token: &Token,
    pseudonym_pk: &[u8; 32],
    utility_pk: &[u8; 32],
    expected_common: &CommonMessage,
) -> bool {
    if token.common != *expected_common {
        return false;
    }
    let Some(message_pk) = CompressedRistretto(*pseudonym_pk).decompress() else {
        return false;
    };
    let Some(y) = CompressedRistretto(*utility_pk).decompress() else {
        return false;
    };
    let sig = &token.signature;
    let scalars = [sig.rho, sig.omega, sig.sigma, sig.delta]
        .map(|b| Option::<Scalar>::from(Scalar::from_canonical_bytes(b)));
    let [Some(rho), Some(omega), Some(sigma), Some(delta)] = scalars else {
        return false;
    };

    let z = token.common.tag_point();
    let alpha = RistrettoPoint::mul_base(&rho) + y * omega;
    let beta = RistrettoPoint::mul_base(&sigma) + z * delta;
    let epsilon = challenge_hash(&alpha, &beta, &z, &message_pk, &token.common);
    omega + delta == epsilon
}

/// Token issuer: holds the utility key, the registry of ESU identities, and
/// the per-identity per-period quota counters.
pub struct Issuer {
    keypair: UtilityKeyPair,
    quota: u32,
    registered: BTreeSet<Address>,
    issued: BTreeMap<(Address, NaiveDate), u32>,
}

pub const DEFAULT_TOKEN_QUOTA: u32 = 10;

impl Issuer {
    pub fn new(keypair: UtilityKeyPair, quota: u32) -> Self {
        Self {
            keypair,
            quota,
            registered: BTreeSet::new(),
            issued: BTreeMap::new(),
        }
    }

    pub fn public_bytes(&self) -> [u8; 32] {
        self.keypair.public_bytes()
    }

    pub fn register_identity(&mut self, identity_pk: &[u8; 32]) {
        self.registered.insert(Address::from_public_key_bytes(identity_pk));
    }

    pub fn issued_count(&self, identity_pk: &[u8; 32], date: NaiveDate) -> u32 {
        let addr = Address::from_public_key_bytes(identity_pk);
        self.issued.get(&(addr, date)).copied().unwrap_or(0)
    }

    /// First move of an issuance session: commit to fresh nonces.
    pub fn commit<R: RngCore + CryptoRng>(
        &self,
        rng: &mut R,
        common: &CommonMessage,
    ) -> (SignerSession, SignerCommitment) {
        let z = common.tag_point();
        let (u, s, d) = (random_scalar(rng), random_scalar(rng), random_scalar(rng));
        let a = RistrettoPoint::mul_base(&u);
        let b = RistrettoPoint::mul_base(&s) + z * d;
        (
            SignerSession {
                u,
                s,
                d,
                common: common.clone(),
            },
            SignerCommitment {
                a: a.compress(),
                b: b.compress(),
            },
        )
    }

    /// Second move: answer the blinded challenge after checking the
    /// requester's identity signature and quota. The issuer only learns the
    /// identity and a count, never the pseudonym key.
    pub fn issue(
        &mut self,
        session: SignerSession,
        challenge: &BlindedChallenge,
        identity_pk: &[u8; 32],
        identity_sig: &SchnorrSignature,
    ) -> Result<IssuerResponse, CredentialError> {
        let identity = Address::from_public_key_bytes(identity_pk);
        if !self.registered.contains(&identity) {
            return Err(CredentialError::UnknownIdentity);
        }
        if !schnorr_verify(identity_pk, &challenge.to_bytes(), identity_sig) {
            return Err(CredentialError::BadIdentitySignature);
        }
        let count = self
            .issued
            .entry((identity, session.common.date))
            .or_insert(0);
        if *count >= self.quota {
            return Err(CredentialError::QuotaExceeded(self.quota));
        }
        *count += 1;

        let c = challenge.0 - session.d;
        let r = session.u - c * self.keypair.secret;
        Ok(IssuerResponse {
            r,
            c,
            s: session.s,
            d: session.d,
        })
    }
}

/// Runs the full blind / issue / unblind exchange locally, as the CLI and
/// tests do when both parties live in one process.
pub fn acquire_token<R: RngCore + CryptoRng>(
    rng: &mut R,
    issuer: &mut Issuer,
    identity: &UtilityKeyPair,
    pseudonym: &PseudonymKeyPair,
    common: &CommonMessage,
) -> Result<Token, CredentialError> {
    let utility_pk = CompressedRistretto(issuer.public_bytes())
        .decompress()
        .expect("issuer key is valid");
    let (session, commitment) = issuer.commit(rng, common);
    let (challenge, state) = blind(rng, &pseudonym.public, &utility_pk, common, &commitment)
        .expect("commitment is valid");
    let identity_sig = sign_identity(rng, identity, &challenge);
    let response = issuer.issue(session, &challenge, &identity.public_bytes(), &identity_sig)?;
    unblind(&response, state)
}
