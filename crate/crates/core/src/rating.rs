//! Mosaic resistance rating vocabulary.
//!
//! Eight varieties map onto seven distinct ratings; lower is more resistant.
//!
//! | variety  | rating |
//! |----------|--------|
//! | Q82      | 1      |
//! | Pindar   | 2      |
//! | Q68      | 5      |
//! | CP29-116 | 6      |
//! | 155      | 6      |
//! | Q205     | 7      |
//! | Q44      | 8      |
//! | Q78      | 9      |

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const RATING_VALUES: [u8; 7] = [1, 2, 5, 6, 7, 8, 9];
pub const NUM_CLASSES: usize = RATING_VALUES.len();

pub const VARIETIES: [(&str, u8); 8] =
    [("CP29-116", 6), ("Pindar", 2), ("Q44", 8), ("Q68", 5), ("Q78", 9), ("Q82", 1), ("155", 6), ("Q205", 7)];

/// One of the seven rating classes. Ordered by rating value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rating(u8);

impl Rating {
    pub fn new(value: u32) -> Result<Self> {
        RATING_VALUES.iter().find(|&&v| v as u32 == value).map(|&v| Rating(v)).ok_or(Error::UnknownRating(value))
    }

    pub fn all() -> impl Iterator<Item = Rating> {
        RATING_VALUES.iter().map(|&v| Rating(v))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Position in ascending vocabulary order, 0..7.
    pub fn index(self) -> usize {
        RATING_VALUES.iter().position(|&v| v == self.0).expect("rating in vocabulary")
    }

    pub fn from_index(i: usize) -> Rating {
        Rating(RATING_VALUES[i])
    }

    /// Nearest vocabulary class to a real-valued rating; ties go to the lower class.
    pub fn nearest(value: f64) -> Rating {
        let mut best = Rating(RATING_VALUES[0]);
        let mut best_d = f64::INFINITY;
        for r in Rating::all() {
            let d = (r.0 as f64 - value).abs();
            if d < best_d {
                best = r;
                best_d = d;
            }
        }
        best
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Rating {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for Rating {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u32::deserialize(d)?;
        Rating::new(v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary() {
        let mut distinct: Vec<u8> = VARIETIES.iter().map(|v| v.1).collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct, RATING_VALUES);
        assert!(Rating::new(3).is_err());
        assert_eq!(Rating::new(9).unwrap().index(), 6);
    }

    #[test]
    fn nearest_class() {
        assert_eq!(Rating::nearest(3.4).value(), 2);
        assert_eq!(Rating::nearest(3.5).value(), 2);
        assert_eq!(Rating::nearest(3.6).value(), 5);
        assert_eq!(Rating::nearest(-4.0).value(), 1);
        assert_eq!(Rating::nearest(40.0).value(), 9);
    }
}
