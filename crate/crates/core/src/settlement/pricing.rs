use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::codec::{Canonical, Encoder};

pub const MICROS_PER_EURO: i64 = 1_000_000;
pub const PPM: u64 = 1_000_000;

/// Fiat amount in micro-euros. Integer so that sums over a scenario are
/// exact.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(pub i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_micros(m: i64) -> Self {
        Money(m)
    }

    /// Rounds to the nearest micro-euro.
    pub fn from_euros(eur: f64) -> Self {
        Money((eur * MICROS_PER_EURO as f64).round() as i64)
    }

    pub fn micros(self) -> i64 {
        self.0
    }

    pub fn as_euros(self) -> f64 {
        self.0 as f64 / MICROS_PER_EURO as f64
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:06}", abs / MICROS_PER_EURO as u64, abs % MICROS_PER_EURO as u64)
    }
}

impl fmt::Debug for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "€{self}")
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

/// How a visited operator's token receipts convert to fiat at clearing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ChargingModel {
    /// `rate` per token.
    PerUnit { rate: Money },
    /// A flat fee per settlement period, less a discount given in parts per
    /// million (200_000 = 20 %).
    Fixed { flat: Money, discount_ppm: u32 },
    /// "1 coin = 1 MB = 1 euro" parity: `tokens_per_mb` tokens of 100KB
    /// make one MB, priced at `euro_per_mb`.
    Parity { tokens_per_mb: u32, euro_per_mb: Money },
}

impl Default for ChargingModel {
    fn default() -> Self {
        ChargingModel::PerUnit { rate: Money(40_000) }
    }
}

impl ChargingModel {
    pub fn parity() -> Self {
        ChargingModel::Parity { tokens_per_mb: 10, euro_per_mb: Money(MICROS_PER_EURO) }
    }

    /// Short label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            ChargingModel::PerUnit { .. } => "per_unit",
            ChargingModel::Fixed { .. } => "fixed",
            ChargingModel::Parity { .. } => "parity",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ChargingModel::PerUnit { rate } if rate.0 < 0 => Err("per-unit rate must be non-negative".into()),
            ChargingModel::Fixed { flat, .. } if flat.0 < 0 => Err("flat fee must be non-negative".into()),
            ChargingModel::Fixed { discount_ppm, .. } if *discount_ppm as u64 > PPM => {
                Err("discount must not exceed 1".into())
            }
            ChargingModel::Parity { tokens_per_mb: 0, .. } => Err("tokens_per_mb must be positive".into()),
            ChargingModel::Parity { euro_per_mb, .. } if euro_per_mb.0 < 0 => {
                Err("parity price must be non-negative".into())
            }
            _ => Ok(()),
        }
    }
}

impl Canonical for ChargingModel {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            ChargingModel::PerUnit { rate } => {
                enc.tag(1).i64(rate.0);
            }
            ChargingModel::Fixed { flat, discount_ppm } => {
                enc.tag(2).i64(flat.0).u64(*discount_ppm as u64);
            }
            ChargingModel::Parity { tokens_per_mb, euro_per_mb } => {
                enc.tag(3).u64(*tokens_per_mb as u64).i64(euro_per_mb.0);
            }
        }
    }
}

/// Fiat owed for `tokens` under `model`. Fractions of a micro-euro are
/// truncated.
pub fn price(model: &ChargingModel, tokens: u64) -> Money {
    match model {
        ChargingModel::PerUnit { rate } => Money(rate.0 * tokens as i64),
        ChargingModel::Fixed { flat, discount_ppm } => {
            let kept = PPM - (*discount_ppm as u64).min(PPM);
            Money(((flat.0 as i128 * kept as i128) / PPM as i128) as i64)
        }
        ChargingModel::Parity { tokens_per_mb, euro_per_mb } => {
            Money(((tokens as i128 * euro_per_mb.0 as i128) / *tokens_per_mb as i128) as i64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_unit_zero_tokens() {
        assert_eq!(price(&ChargingModel::PerUnit { rate: Money::from_euros(0.04) }, 0), Money::ZERO);
    }

    #[test]
    fn per_unit_visit_costs_one_euro() {
        let m = ChargingModel::PerUnit { rate: Money::from_euros(0.04) };
        assert_eq!(price(&m, 25), Money::from_euros(1.0));
    }

    #[test]
    fn fixed_ignores_volume() {
        let m = ChargingModel::Fixed { flat: Money::from_euros(1000.0), discount_ppm: 200_000 };
        for tokens in [0, 1, 25, 1_000_000] {
            assert_eq!(price(&m, tokens), Money::from_euros(800.0));
        }
    }

    #[test]
    fn parity_prices_per_megabyte() {
        assert_eq!(price(&ChargingModel::parity(), 25), Money::from_euros(2.5));
        assert_eq!(price(&ChargingModel::parity(), 10), Money::from_euros(1.0));
    }

    #[test]
    fn validation() {
        assert!(ChargingModel::Fixed { flat: Money(1), discount_ppm: 1_000_001 }.validate().is_err());
        assert!(ChargingModel::PerUnit { rate: Money(-1) }.validate().is_err());
        assert!(ChargingModel::default().validate().is_ok());
    }

    #[test]
    fn money_display() {
        assert_eq!(Money::from_euros(1.0).to_string(), "1.000000");
        assert_eq!(Money(-1_500_000).to_string(), "-1.500000");
        assert_eq!(Money(40_000).to_string(), "0.040000");
    }

    proptest::proptest! {
        #[test]
        fn price_monotone_in_tokens(a in 0u64..1_000_000, b in 0u64..1_000_000, rate in 0i64..10_000_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for m in [ChargingModel::PerUnit { rate: Money(rate) }, ChargingModel::parity()] {
                proptest::prop_assert!(price(&m, lo) <= price(&m, hi));
                proptest::prop_assert_eq!(price(&m, lo), price(&m, lo));
            }
        }
    }
}
