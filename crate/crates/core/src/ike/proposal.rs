use std::fmt;

use super::message::{Message, INTERMEDIATE_EXCHANGE_SUPPORTED};
use super::IkeError;
use crate::kem::{DhGroup, KemRegistry, KemSuiteId};
use crate::suite::{Encr, Integ};

/// At most ADDKE1..ADDKE7.
pub const MAX_ADDKE: usize = 7;

/// One acceptable combination of cipher, PRF/integrity hash, classical
/// group and ordered chain of additional key exchanges.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Proposal {
    pub encr: Encr,
    pub integ: Integ,
    pub ke: u16,
    pub addke: Vec<KemSuiteId>,
}

impl Proposal {
    pub fn new(encr: Encr, integ: Integ, ke: u16, addke: &[&str]) -> Self {
        Self {
            encr,
            integ,
            ke,
            addke: addke.iter().map(|&s| KemSuiteId::from(s)).collect(),
        }
    }

    pub fn validate(&self, reg: &KemRegistry) -> Result<(), IkeError> {
        if self.addke.len() > MAX_ADDKE {
            return Err(IkeError::InvalidConfig(format!(
                "{} additional key exchanges exceed the limit of {MAX_ADDKE}",
                self.addke.len()
            )));
        }
        for (i, s) in self.addke.iter().enumerate() {
            if self.addke[..i].contains(s) {
                return Err(IkeError::InvalidConfig(format!("duplicate additional KE `{s}`")));
            }
            reg.get(s.as_str())
                .map_err(|e| IkeError::InvalidConfig(e.to_string()))?;
        }
        if DhGroup::by_id(self.ke).is_none() {
            return Err(IkeError::InvalidConfig(format!("unknown DH group {}", self.ke)));
        }
        Ok(())
    }

    /// `none` for an empty chain, otherwise suite names joined with `+`.
    pub fn kem_label(&self) -> String {
        if self.addke.is_empty() {
            "none".to_string()
        } else {
            self.addke
                .iter()
                .map(KemSuiteId::as_str)
                .collect::<Vec<_>>()
                .join("+")
        }
    }
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/group{}/addke={}",
            self.encr,
            self.integ,
            self.ke,
            self.kem_label()
        )
    }
}

/// Responder-side choice: the first local proposal that the initiator also
/// offered, compared exactly (addke order included). Proposals that need
/// additional exchanges are only eligible when the request announced
/// intermediate-exchange support, and the KE payload must already be in the
/// chosen group.
pub fn select_proposal(request: &Message, local: &[Proposal]) -> Result<Proposal, IkeError> {
    let offered = request
        .proposals()
        .ok_or_else(|| IkeError::Malformed("SA_INIT request without SA payload".into()))?;
    let ke_group = request.payloads.iter().find_map(|p| match p {
        super::message::Payload::KeyExchange { group, .. } => Some(*group),
        _ => None,
    });
    let intermediate_ok = request.has_notify(INTERMEDIATE_EXCHANGE_SUPPORTED);
    local
        .iter()
        .find(|mine| {
            offered.contains(mine)
                && Some(mine.ke) == ke_group
                && (mine.addke.is_empty() || intermediate_ok)
        })
        .cloned()
        .ok_or(IkeError::NoProposalChosen)
}
