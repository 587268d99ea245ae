//! Counter-based random streams.
//!
//! Each draw is addressed by `(master_seed, trial_index, patient_index,
//! endpoint)`. The master seed is hashed into a ChaCha8 key, the trial index
//! selects the ChaCha stream and the patient/endpoint pair selects a fixed
//! word offset inside that stream. No generator state is shared between
//! trials or patients, so the order in which they are produced is irrelevant.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// log2 of the number of 32-bit words reserved per (patient, endpoint) slot.
const SLOT_BITS: u32 = 16;

/// Which latent a draw feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Toxicity = 0,
    Efficacy = 1,
}

/// The random stream of a single simulated trial.
#[derive(Clone)]
pub struct TrialStream {
    key: [u8; 32],
    trial_index: u64,
}

impl std::fmt::Debug for TrialStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrialStream")
            .field("key", &hex::encode(&self.key[..8]))
            .field("trial_index", &self.trial_index)
            .finish()
    }
}

/// Stream for trial `trial_index` under `master_seed`.
pub fn derive_patient_stream(master_seed: u64, trial_index: u64) -> TrialStream {
    let mut hasher = Sha256::new();
    hasher.update(b"dosesim/trial-stream/v1");
    hasher.update(master_seed.to_le_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&hasher.finalize());
    TrialStream { key, trial_index }
}

impl TrialStream {
    pub fn trial_index(&self) -> u64 {
        self.trial_index
    }

    /// Generator positioned at the start of the slot for one patient and
    /// endpoint. Each slot holds 2^16 words, far more than any draw needs.
    pub fn rng(&self, patient: usize, endpoint: Endpoint) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.trial_index);
        let slot = ((patient as u128) << 1) | endpoint as u128;
        rng.set_word_pos(slot << SLOT_BITS);
        rng
    }

    /// First uniform of a patient's slot, in the open interval (0, 1).
    pub fn uniform(&self, patient: usize, endpoint: Endpoint) -> f64 {
        open_unit(&mut self.rng(patient, endpoint))
    }

    /// Toxicity-slot uniforms for patients `0, 1, 2, ...`.
    pub fn uniforms(&self) -> impl Iterator<Item = f64> + '_ {
        (0..).map(move |i| self.uniform(i, Endpoint::Toxicity))
    }
}

/// Uniform draw from the open interval (0, 1): the midpoint of one of 2^52
/// equal cells. With 53 bits the top midpoint would round up to 1.0.
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 52) as f64;
    ((rng.next_u64() >> 12) as f64 + 0.5) * SCALE
}
