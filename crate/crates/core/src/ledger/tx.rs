use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, Digest, Encoder};
use crate::crypto::{KeyMaterial, Signature, SignatureScheme};
use crate::ids::{ActorId, ChannelId, LotId, MnoId, SessionId, WalletId};
use crate::settlement::{ChargingModel, Money};

pub type TxId = Digest;

/// Terms recorded when two operators register a roaming agreement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementTerms {
    /// Issuers whose tokens the visited operator accepts from the home
    /// operator's customers.
    pub accepts_tokens_of: Vec<MnoId>,
    pub charging_model: ChargingModel,
}

impl Canonical for AgreementTerms {
    fn encode(&self, enc: &mut Encoder) {
        enc.seq(&self.accepts_tokens_of).encode(&self.charging_model);
    }
}

/// On-chain payloads. Token amounts are signed on the wire so that a
/// malformed negative amount reaches the validators instead of failing to
/// parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum TxPayload {
    Issue {
        issuer: MnoId,
        wallet: WalletId,
        amount: i64,
    },
    AgreementRegistration {
        hmno: MnoId,
        vmno: MnoId,
        terms: AgreementTerms,
    },
    AttachCheck {
        session: SessionId,
        roamer_wallet: WalletId,
        vmno: MnoId,
        hmno: MnoId,
        accepted: bool,
    },
    ChannelOpen {
        channel: ChannelId,
        wallet: WalletId,
        vmno: MnoId,
        deposit: i64,
        hashlock: Digest,
        timelock_expiry: u64,
    },
    ChannelClose {
        channel: ChannelId,
        paid: i64,
        refunded: i64,
        final_seq: u64,
    },
    Redeem {
        vmno: MnoId,
        hmno: MnoId,
        lots: Vec<LotId>,
        fiat: Money,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    Issue,
    AgreementRegistration,
    AttachCheck,
    ChannelOpen,
    ChannelClose,
    Redeem,
}

impl TxKind {
    pub const ALL: [TxKind; 6] = [
        TxKind::Issue,
        TxKind::AgreementRegistration,
        TxKind::AttachCheck,
        TxKind::ChannelOpen,
        TxKind::ChannelClose,
        TxKind::Redeem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TxKind::Issue => "Issue",
            TxKind::AgreementRegistration => "AgreementRegistration",
            TxKind::AttachCheck => "AttachCheck",
            TxKind::ChannelOpen => "ChannelOpen",
            TxKind::ChannelClose => "ChannelClose",
            TxKind::Redeem => "Redeem",
        }
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TxPayload {
    pub fn kind(&self) -> TxKind {
        match self {
            TxPayload::Issue { .. } => TxKind::Issue,
            TxPayload::AgreementRegistration { .. } => TxKind::AgreementRegistration,
            TxPayload::AttachCheck { .. } => TxKind::AttachCheck,
            TxPayload::ChannelOpen { .. } => TxKind::ChannelOpen,
            TxPayload::ChannelClose { .. } => TxKind::ChannelClose,
            TxPayload::Redeem { .. } => TxKind::Redeem,
        }
    }

    /// Structural checks that hold for every payload regardless of which
    /// module produced it.
    pub fn check_structure(&self) -> Result<(), String> {
        let non_negative = |name: &str, v: i64| {
            if v < 0 {
                Err(format!("{name} must be non-negative, got {v}"))
            } else {
                Ok(())
            }
        };
        match self {
            TxPayload::Issue { amount, .. } => non_negative("amount", *amount),
            TxPayload::ChannelOpen { deposit, .. } => non_negative("deposit", *deposit),
            TxPayload::ChannelClose { paid, refunded, .. } => {
                non_negative("paid", *paid)?;
                non_negative("refunded", *refunded)
            }
            TxPayload::Redeem { fiat, .. } => non_negative("fiat", fiat.0),
            TxPayload::AgreementRegistration { .. } | TxPayload::AttachCheck { .. } => Ok(()),
        }
    }

    /// Operators named by the payload. Used for read scoping.
    pub fn parties(&self) -> Vec<&MnoId> {
        match self {
            TxPayload::Issue { issuer, .. } => vec![issuer],
            TxPayload::AgreementRegistration { hmno, vmno, .. }
            | TxPayload::AttachCheck { hmno, vmno, .. }
            | TxPayload::Redeem { hmno, vmno, .. } => vec![hmno, vmno],
            TxPayload::ChannelOpen { vmno, .. } => vec![vmno],
            TxPayload::ChannelClose { .. } => vec![],
        }
    }

    pub fn channel(&self) -> Option<&ChannelId> {
        match self {
            TxPayload::ChannelOpen { channel, .. } | TxPayload::ChannelClose { channel, .. } => Some(channel),
            _ => None,
        }
    }

    pub fn wallet(&self) -> Option<&WalletId> {
        match self {
            TxPayload::Issue { wallet, .. } | TxPayload::ChannelOpen { wallet, .. } => Some(wallet),
            TxPayload::AttachCheck { roamer_wallet, .. } => Some(roamer_wallet),
            _ => None,
        }
    }
}

impl Canonical for TxPayload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            TxPayload::Issue { issuer, wallet, amount } => {
                enc.tag(1).encode(issuer).encode(wallet).i64(*amount);
            }
            TxPayload::AgreementRegistration { hmno, vmno, terms } => {
                enc.tag(2).encode(hmno).encode(vmno).encode(terms);
            }
            TxPayload::AttachCheck { session, roamer_wallet, vmno, hmno, accepted } => {
                enc.tag(3).encode(session).encode(roamer_wallet).encode(vmno).encode(hmno).bool(*accepted);
            }
            TxPayload::ChannelOpen { channel, wallet, vmno, deposit, hashlock, timelock_expiry } => {
                enc.tag(4)
                    .encode(channel)
                    .encode(wallet)
                    .encode(vmno)
                    .i64(*deposit)
                    .digest(hashlock)
                    .u64(*timelock_expiry);
            }
            TxPayload::ChannelClose { channel, paid, refunded, final_seq } => {
                enc.tag(5).encode(channel).i64(*paid).i64(*refunded).u64(*final_seq);
            }
            TxPayload::Redeem { vmno, hmno, lots, fiat } => {
                enc.tag(6).encode(vmno).encode(hmno).seq(lots).i64(fiat.0);
            }
        }
    }
}

/// A signed ledger entry. `tx_id` covers timestamp, signer and payload; the
/// signature is over `tx_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub tx_id: TxId,
    pub timestamp: u64,
    pub signer: ActorId,
    pub payload: TxPayload,
    pub signature: Signature,
}

impl Transaction {
    pub fn compute_id(timestamp: u64, signer: &ActorId, payload: &TxPayload) -> TxId {
        let mut enc = Encoder::new();
        enc.str("dice/tx").u64(timestamp).encode(signer).encode(payload);
        crate::codec::sha256(&enc.finish())
    }

    pub fn new_signed(
        timestamp: u64,
        signer: ActorId,
        payload: TxPayload,
        key: &KeyMaterial,
        scheme: &dyn SignatureScheme,
    ) -> Self {
        let tx_id = Self::compute_id(timestamp, &signer, &payload);
        let signature = scheme.sign(key, &tx_id.0);
        Transaction { tx_id, timestamp, signer, payload, signature }
    }

    pub fn id_matches(&self) -> bool {
        Self::compute_id(self.timestamp, &self.signer, &self.payload) == self.tx_id
    }

    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }
}
