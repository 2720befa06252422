use std::cmp::Ordering;
use std::hash::{Hash, Hasher};

/// Split predicate `x[feature] <= threshold`; true sends an instance to the left child.
#[derive(Debug, Clone, Copy)]
pub struct Condition {
    pub feature: usize,
    pub threshold: f64,
}

impl Condition {
    /// `-0.0` is folded into `0.0`; the two thresholds split every input identically.
    pub fn new(feature: usize, threshold: f64) -> Self {
        let threshold = if threshold == 0.0 { 0.0 } else { threshold };
        Self { feature, threshold }
    }

    #[inline]
    pub fn holds(&self, instance: &[f64]) -> bool {
        instance[self.feature] <= self.threshold
    }
}

impl PartialEq for Condition {
    fn eq(&self, other: &Self) -> bool {
        self.feature == other.feature && self.threshold.to_bits() == other.threshold.to_bits()
    }
}

impl Eq for Condition {}

impl Hash for Condition {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.feature.hash(state);
        self.threshold.to_bits().hash(state);
    }
}

impl Ord for Condition {
    fn cmp(&self, other: &Self) -> Ordering {
        self.feature
            .cmp(&other.feature)
            .then(self.threshold.total_cmp(&other.threshold))
    }
}

impl PartialOrd for Condition {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "f{} <= {}", self.feature, self.threshold)
    }
}
