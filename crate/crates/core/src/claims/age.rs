use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgeBucket {
    pub ordinal: usize,
    pub lower: u32,
    /// Inclusive upper bound; `None` for the open-ended last bucket.
    pub upper: Option<u32>,
}

impl AgeBucket {
    pub fn label(&self) -> String {
        match self.upper {
            Some(hi) => format!("{}-{}", self.lower, hi),
            None => format!("{}+", self.lower),
        }
    }
}

/// A partition of `[0, ∞)` into contiguous age ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct AgeBuckets {
    buckets: Vec<AgeBucket>,
}

pub const DEFAULT_LOWER_BOUNDS: [u32; 9] = [0, 3, 6, 14, 19, 34, 49, 65, 79];

impl Default for AgeBuckets {
    fn default() -> Self {
        Self::from_lower_bounds(&DEFAULT_LOWER_BOUNDS).expect("default age table is valid")
    }
}

impl AgeBuckets {
    /// Builds buckets from strictly increasing lower bounds starting at 0.
    pub fn from_lower_bounds(bounds: &[u32]) -> Result<Self> {
        if bounds.first() != Some(&0) {
            return Err(Error::Config("age buckets must start at 0".into()));
        }
        if bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "age bucket bounds must be strictly increasing".into(),
            ));
        }
        let buckets = bounds
            .iter()
            .enumerate()
            .map(|(i, &lower)| AgeBucket {
                ordinal: i,
                lower,
                upper: bounds.get(i + 1).map(|next| next - 1),
            })
            .collect();
        Ok(AgeBuckets { buckets })
    }

    pub fn discretize(&self, age_years: u32) -> &AgeBucket {
        let i = self.buckets.partition_point(|b| b.lower <= age_years) - 1;
        &self.buckets[i]
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AgeBucket> {
        self.buckets.iter()
    }

    pub fn lower_bounds(&self) -> Vec<u32> {
        self.buckets.iter().map(|b| b.lower).collect()
    }
}

impl TryFrom<Vec<u32>> for AgeBuckets {
    type Error = Error;

    fn try_from(bounds: Vec<u32>) -> Result<Self> {
        Self::from_lower_bounds(&bounds)
    }
}

impl From<AgeBuckets> for Vec<u32> {
    fn from(b: AgeBuckets) -> Self {
        b.lower_bounds()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_table_examples() {
        let t = AgeBuckets::default();
        assert_eq!(t.discretize(65).label(), "65-78");
        assert_eq!(t.discretize(0).ordinal, 0);
        let last = t.discretize(120);
        assert_eq!(last.ordinal, t.len() - 1);
        assert_eq!(last.upper, None);
        assert_eq!(last.label(), "79+");
        assert_eq!(t.discretize(78).label(), "65-78");
        assert_eq!(t.discretize(79).label(), "79+");
        assert_eq!(t.discretize(2).label(), "0-2");
        assert_eq!(t.discretize(3).label(), "3-5");
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(AgeBuckets::from_lower_bounds(&[1, 5]).is_err());
        assert!(AgeBuckets::from_lower_bounds(&[0, 5, 5]).is_err());
        assert!(AgeBuckets::from_lower_bounds(&[]).is_err());
    }

    #[test]
    fn serde_as_bounds() {
        let t = AgeBuckets::default();
        let js = serde_json::to_string(&t).unwrap();
        assert_eq!(js, "[0,3,6,14,19,34,49,65,79]");
        let back: AgeBuckets = serde_json::from_str(&js).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<AgeBuckets>("[2,4]").is_err());
    }

    proptest! {
        #[test]
        fn discretize_is_monotone_and_contains(a in 0u32..200, b in 0u32..200) {
            let t = AgeBuckets::default();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(t.discretize(lo).ordinal <= t.discretize(hi).ordinal);
            let bucket = t.discretize(a);
            prop_assert!(bucket.lower <= a);
            prop_assert!(bucket.upper.is_none_or(|u| a <= u));
        }
    }
}
