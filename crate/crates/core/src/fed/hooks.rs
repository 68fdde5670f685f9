//! Attachable server and client managers.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::{Aggregation, FedConfig, FedError};
use crate::model::ParamVector;
use crate::paillier::{Ciphertext, FixedPointCodec, PaillierPublicKey, PaillierSecretKey};
use crate::rng::Rng;

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub rank: u32,
    pub n_samples: u64,
    pub update: ParamVector,
}

pub struct ServerContext<'a> {
    pub round: u32,
    /// Global parameters at the start of the round; unknown to the server
    /// once aggregation happens under encryption.
    pub global: Option<&'a ParamVector>,
    pub config: &'a FedConfig,
}

pub trait ServerHook {
    fn pre_aggregate(
        &mut self,
        _ctx: &ServerContext,
        updates: Vec<ClientUpdate>,
    ) -> Result<Vec<ClientUpdate>, FedError> {
        Ok(updates)
    }

    fn post_aggregate(
        &mut self,
        _ctx: &ServerContext,
        global: ParamVector,
    ) -> Result<ParamVector, FedError> {
        Ok(global)
    }

    /// Called instead of `pre_aggregate` when updates arrive encrypted.
    fn observe_encrypted(&mut self, _ctx: &ServerContext, _senders: &[(u32, u64)]) {}
}

pub struct ClientContext<'a> {
    pub round: u32,
    pub rank: u32,
    pub global: &'a ParamVector,
    pub config: &'a FedConfig,
}

pub trait ClientHook: Send {
    fn transform_update(
        &mut self,
        ctx: &ClientContext,
        update: ParamVector,
    ) -> Result<ParamVector, FedError>;
}

/// Hooks for a whole federation. Each list runs in attachment order.
#[derive(Default)]
pub struct HookSet {
    pub server: Vec<Box<dyn ServerHook>>,
    pub client: BTreeMap<u32, Vec<Box<dyn ClientHook>>>,
    pub paillier: Option<PaillierClientHook>,
}

impl HookSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attach_server(mut self, hook: impl ServerHook + 'static) -> Self {
        self.server.push(Box::new(hook));
        self
    }

    pub fn attach_client(mut self, rank: u32, hook: impl ClientHook + 'static) -> Self {
        self.client.entry(rank).or_default().push(Box::new(hook));
        self
    }

    /// Attaches a fresh hook to each rank in `1..=clients`.
    pub fn attach_all_clients<H: ClientHook + 'static>(
        mut self,
        clients: u32,
        mut make: impl FnMut(u32) -> H,
    ) -> Self {
        for rank in 1..=clients {
            self.client
                .entry(rank)
                .or_default()
                .push(Box::new(make(rank)));
        }
        self
    }

    pub fn attach_paillier(mut self, hook: PaillierClientHook) -> Self {
        self.paillier = Some(hook);
        self
    }

    pub fn take_client_hooks(&mut self, rank: u32) -> Vec<Box<dyn ClientHook>> {
        self.client.remove(&rank).unwrap_or_default()
    }
}

/// Does nothing; attaching it must not change a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityHook;

impl ServerHook for IdentityHook {}

impl ClientHook for IdentityHook {
    fn transform_update(
        &mut self,
        _ctx: &ClientContext,
        update: ParamVector,
    ) -> Result<ParamVector, FedError> {
        Ok(update)
    }
}

/// Keeps the ⌈k·d⌉ largest-magnitude coordinates, zeroing the rest.
#[derive(Debug, Clone, Copy)]
pub struct SparseTopK {
    k_fraction: f64,
}

impl SparseTopK {
    pub fn new(k_fraction: f64) -> Result<Self, FedError> {
        if !(k_fraction > 0.0 && k_fraction <= 1.0) {
            return Err(FedError::InvalidConfig(format!(
                "k_fraction {k_fraction} not in (0, 1]"
            )));
        }
        Ok(Self { k_fraction })
    }

    pub fn survivors(&self, v: &[f64]) -> Vec<usize> {
        let keep = ((self.k_fraction * v.len() as f64).ceil() as usize).min(v.len());
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
        idx.truncate(keep);
        idx.sort_unstable();
        idx
    }

    pub fn apply(&self, mut update: ParamVector) -> ParamVector {
        let keep = self.survivors(update.values());
        let mut mask = vec![false; update.len()];
        for i in keep {
            mask[i] = true;
        }
        for (v, m) in update.values_mut().iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
        update
    }
}

impl ClientHook for SparseTopK {
    fn transform_update(
        &mut self,
        _ctx: &ClientContext,
        update: ParamVector,
    ) -> Result<ParamVector, FedError> {
        Ok(self.apply(update))
    }
}

/// Records the global model seen at the start of every round.
#[derive(Debug, Clone, Default)]
pub struct GlobalRecorder {
    pub log: Arc<Mutex<Vec<(u32, ParamVector)>>>,
}

impl GlobalRecorder {
    pub fn snapshot(&self) -> Vec<(u32, ParamVector)> {
        self.log.lock().expect("recorder poisoned").clone()
    }
}

impl ServerHook for GlobalRecorder {
    fn post_aggregate(
        &mut self,
        ctx: &ServerContext,
        global: ParamVector,
    ) -> Result<ParamVector, FedError> {
        self.log
            .lock()
            .expect("recorder poisoned")
            .push((ctx.round + 1, global.clone()));
        Ok(global)
    }
}

impl ClientHook for GlobalRecorder {
    fn transform_update(
        &mut self,
        ctx: &ClientContext,
        update: ParamVector,
    ) -> Result<ParamVector, FedError> {
        self.log
            .lock()
            .expect("recorder poisoned")
            .push((ctx.round, ctx.global.clone()));
        Ok(update)
    }
}

/// Records every outgoing update in plaintext (test instrumentation).
#[derive(Debug, Clone, Default)]
pub struct UpdateRecorder {
    pub log: Arc<Mutex<Vec<(u32, u32, ParamVector)>>>,
}

impl ClientHook for UpdateRecorder {
    fn transform_update(
        &mut self,
        ctx: &ClientContext,
        update: ParamVector,
    ) -> Result<ParamVector, FedError> {
        self.log
            .lock()
            .expect("recorder poisoned")
            .push((ctx.round, ctx.rank, update.clone()));
        Ok(update)
    }
}

/// Client-side Paillier manager: every client holds the same keypair,
/// the server only ever sees the public key.
#[derive(Debug, Clone)]
pub struct PaillierClientHook {
    pk: PaillierPublicKey,
    sk: PaillierSecretKey,
    codec: FixedPointCodec,
}

impl PaillierClientHook {
    pub fn new(
        pk: PaillierPublicKey,
        sk: PaillierSecretKey,
        codec: FixedPointCodec,
    ) -> Result<Self, FedError> {
        if pk.key_id() != sk.key_id() || codec.modulus() != &pk.n {
            return Err(FedError::Paillier(
                crate::paillier::PaillierError::KeyMismatch,
            ));
        }
        Ok(Self { pk, sk, codec })
    }

    pub fn public_key(&self) -> &PaillierPublicKey {
        &self.pk
    }

    pub fn codec(&self) -> &FixedPointCodec {
        &self.codec
    }

    /// Encodes and encrypts coordinatewise.
    pub fn seal(&self, update: &ParamVector, rng: &mut Rng) -> Result<Vec<Ciphertext>, FedError> {
        let encoded = self.codec.encode_vec(update.values())?;
        encoded
            .iter()
            .map(|m| self.pk.encrypt(m, rng).map_err(FedError::from))
            .collect()
    }

    /// Decrypts an aggregate and divides by the total weight.
    pub fn open(
        &self,
        aggregate: &[Ciphertext],
        total_weight: u64,
        layout_of: &ParamVector,
    ) -> Result<ParamVector, FedError> {
        if total_weight == 0 {
            return Err(FedError::Protocol(
                "aggregate with zero total weight".into(),
            ));
        }
        let mut values = Vec::with_capacity(aggregate.len());
        for c in aggregate {
            let m = self.sk.decrypt(&self.pk, c)?;
            values.push(self.codec.decode_scaled(&m, total_weight as f64));
        }
        Ok(layout_of.with_values(values)?)
    }
}

/// Σₖ nₖ · Enc(uₖ), computed with ciphertext products and powers only.
pub fn paillier_server_aggregate(
    pk: &PaillierPublicKey,
    updates: &[(Vec<Ciphertext>, u64)],
) -> Result<Vec<Ciphertext>, FedError> {
    let first = updates.first().ok_or(FedError::EmptyUpdates)?;
    let d = first.0.len();
    let mut acc = vec![pk.zero(); d];
    for (cs, n) in updates {
        if cs.len() != d {
            return Err(FedError::Protocol(format!(
                "encrypted update of length {} vs {d}",
                cs.len()
            )));
        }
        let weight = num_bigint::BigUint::from(*n);
        for (a, c) in acc.iter_mut().zip(cs) {
            *a = pk.add_cipher(a, &pk.mul_plain(c, &weight)?)?;
        }
    }
    Ok(acc)
}

/// How a client's update relates to its locally trained weights.
pub fn update_from_local(
    aggregation: Aggregation,
    local: &ParamVector,
    global: &ParamVector,
) -> Result<ParamVector, FedError> {
    Ok(match aggregation {
        Aggregation::WeightedDelta => local.sub(global)?,
        Aggregation::WeightedParams => local.clone(),
    })
}
