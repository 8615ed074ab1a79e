//! Opaque identifiers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, Encoder};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl Canonical for $name {
            fn encode(&self, enc: &mut Encoder) {
                enc.str(&self.0);
            }
        }
    };
}

string_id!(
    /// A consortium member (mobile network operator).
    MnoId
);
string_id!(
    /// Anything that can hold a key: operators and roamers.
    ActorId
);
string_id!(WalletId);
string_id!(ChannelId);
string_id!(LotId);
string_id!(SessionId);

impl From<&MnoId> for ActorId {
    fn from(m: &MnoId) -> Self {
        ActorId(m.0.clone())
    }
}

impl WalletId {
    /// The wallet in which an operator receives channel payments.
    pub fn treasury(mno: &MnoId) -> WalletId {
        WalletId(format!("treasury:{}", mno.0))
    }
}
