//! Fake-client model poisoning.

use crate::fed::{ClientContext, ClientHook, FedError};
use crate::model::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub enum MpafMode {
    /// Send `scale·(w_target − w_global)`.
    Target { w_target: ParamVector, scale: f64 },
    /// Replay this client's previous-round update; zero in the first round.
    History,
}

/// Client hook that replaces the honest update.
#[derive(Debug, Clone)]
pub struct MpafHook {
    mode: MpafMode,
    previous: Option<ParamVector>,
}

impl MpafHook {
    pub fn target(w_target: ParamVector, scale: f64) -> Self {
        Self {
            mode: MpafMode::Target { w_target, scale },
            previous: None,
        }
    }

    pub fn history() -> Self {
        Self {
            mode: MpafMode::History,
            previous: None,
        }
    }
}

impl ClientHook for MpafHook {
    fn transform_update(
        &mut self,
        ctx: &ClientContext,
        update: ParamVector,
    ) -> Result<ParamVector, FedError> {
        match &self.mode {
            MpafMode::Target { w_target, scale } => {
                let mut u = w_target.sub(ctx.global)?;
                u.scale(*scale);
                Ok(u)
            }
            MpafMode::History => {
                let out = match self.previous.take() {
                    Some(p) => {
                        ctx.global.check_layout(&p)?;
                        p
                    }
                    None => ParamVector::zeros_like(&update),
                };
                self.previous = Some(update);
                Ok(out)
            }
        }
    }
}
