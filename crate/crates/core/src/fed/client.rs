//! Client-side protocol loop.

use super::hooks::{ClientContext, ClientHook, PaillierClientHook};
use super::wire::{FedMessage, MessageKind, Payload};
use super::{client_local_update, Aggregation, Channel, FedConfig, FedError};
use crate::model::{Dataset, Model, ParamVector};
use crate::rng::{Rng, SeedTree};

pub struct FedClient<'a> {
    /// Requested rank; 0 lets the server assign one.
    pub rank: u32,
    pub model: Model,
    pub shard: &'a Dataset,
    pub config: FedConfig,
    pub hooks: Vec<Box<dyn ClientHook>>,
    pub paillier: Option<PaillierClientHook>,
    seeds: SeedTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub rank: u32,
    /// The last global model this client received.
    pub global: ParamVector,
    pub final_loss: f64,
}

impl<'a> FedClient<'a> {
    /// Training draws from stream `client{rank}` and encryption from
    /// `paillier{rank}` of the assigned rank, so turning encryption on
    /// leaves training untouched.
    pub fn new(
        rank: u32,
        model: Model,
        shard: &'a Dataset,
        config: FedConfig,
        seeds: &SeedTree,
    ) -> Self {
        Self {
            rank,
            model,
            shard,
            config,
            hooks: Vec::new(),
            paillier: None,
            seeds: *seeds,
        }
    }
}

fn apply_sync(
    client: &FedClient,
    msg: FedMessage,
    global: Option<&ParamVector>,
) -> Result<ParamVector, FedError> {
    let template = client.model.params();
    match (msg.kind, msg.payload) {
        (MessageKind::GlobalModel, Payload::Params(v)) => Ok(template.with_values(v)?),
        (MessageKind::EncUpdate, Payload::Ciphers(cs)) => {
            let hook = client
                .paillier
                .as_ref()
                .ok_or_else(|| FedError::Protocol("encrypted aggregate but no key".into()))?;
            let pk = hook.public_key();
            let cs = cs
                .into_iter()
                .map(|c| pk.adopt(c))
                .collect::<Result<Vec<_>, _>>()?;
            let mean = hook.open(&cs, msg.n_samples, &template)?;
            match client.config.aggregation {
                Aggregation::WeightedParams => Ok(mean),
                Aggregation::WeightedDelta => {
                    let g = global.ok_or_else(|| {
                        FedError::Protocol("delta before any global model".into())
                    })?;
                    Ok(g.add(&mean)?)
                }
            }
        }
        (kind, _) => Err(FedError::Protocol(format!(
            "unexpected {kind:?} from server"
        ))),
    }
}

pub fn run_client(mut client: FedClient, ch: &mut dyn Channel) -> Result<ClientOutcome, FedError> {
    ch.send(&FedMessage::hello(client.rank))?;
    let ack = ch.recv()?;
    if ack.kind != MessageKind::Hello {
        return Err(FedError::Protocol(format!(
            "expected Hello ack, got {:?}",
            ack.kind
        )));
    }
    let rank = ack.rank;
    let rounds = ack.round;
    let mut rng: Rng = client.seeds.stream(&format!("client{rank}"));
    let mut crypto_rng: Rng = client.seeds.stream(&format!("paillier{rank}"));
    let mut global: Option<ParamVector> = None;
    for r in 0..=rounds {
        let msg = ch.recv()?;
        if msg.round != r {
            return Err(FedError::RoundDesync {
                expected: r,
                found: msg.round,
            });
        }
        let g = apply_sync(&client, msg, global.as_ref())?;
        let loss = client
            .model
            .with_params(&g)?
            .loss(&client.shard.x, &client.shard.y)?;
        let n = client.shard.len() as u64;
        if r == rounds {
            ch.send(
                &FedMessage::new(MessageKind::Bye, r, rank)
                    .with_samples(n)
                    .with_metric(loss),
            )?;
            return Ok(ClientOutcome {
                rank,
                global: g,
                final_loss: loss,
            });
        }
        let (mut update, n) =
            client_local_update(&client.model, &g, client.shard, &client.config, &mut rng)?;
        let ctx = ClientContext {
            round: r,
            rank,
            global: &g,
            config: &client.config,
        };
        for h in client.hooks.iter_mut() {
            update = h.transform_update(&ctx, update)?;
        }
        let reply = FedMessage::new(MessageKind::LocalUpdate, r, rank)
            .with_samples(n)
            .with_metric(loss);
        let reply = match &client.paillier {
            None => reply.with_payload(Payload::Params(update.into_values())),
            Some(hook) => {
                let cs = hook.seal(&update, &mut crypto_rng)?;
                FedMessage {
                    kind: MessageKind::EncUpdate,
                    payload: Payload::Ciphers(cs.into_iter().map(|c| c.value().clone()).collect()),
                    ..reply
                }
            }
        };
        ch.send(&reply)?;
        global = Some(g);
    }
    unreachable!("loop returns at the final round")
}
