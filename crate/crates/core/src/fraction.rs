//! Exact rational helpers. Tier and alignment decisions never touch floats;
//! floats appear only when a percentage is rendered.

use num_rational::Ratio;

pub type Fraction = Ratio<u64>;

/// `count / total` as a percentage with one decimal, rounding half up.
///
/// Works on integers only, so 2/3 renders as `66.7` and 60/159 as `37.7`.
pub fn percent_one_decimal(count: u64, total: u64) -> String {
    if total == 0 {
        return "0.0".to_owned();
    }
    // tenths of a percent, rounded half up: floor((count * 1000 * 2 + total) / (2 * total))
    let tenths = (count * 2000 + total) / (2 * total);
    format!("{}.{}", tenths / 10, tenths % 10)
}

pub fn percent_of(f: Fraction) -> String {
    percent_one_decimal(*f.numer(), *f.denom())
}

/// Serde adapter writing fractions as `"n/d"` text.
pub mod text {
    use super::Fraction;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &Fraction, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&format_args!("{}/{}", f.numer(), f.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Fraction, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse(&s).ok_or_else(|| D::Error::custom(format!("invalid fraction {s:?}")))
    }

    pub fn parse(s: &str) -> Option<Fraction> {
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim().parse().ok()?, d.trim().parse().ok()?),
            None => (s.trim().parse().ok()?, 1),
        };
        if d == 0 {
            return None;
        }
        Some(Fraction::new(n, d))
    }
}
