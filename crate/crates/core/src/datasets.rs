//! Seeded synthetic datasets. `blobs` and `xor` are small test fixtures; the
//! profiles mimic the shape of common UCI benchmarks (feature count, class
//! count, discrete vs continuous columns, class balance) at desk scale.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::Dataset;
use crate::error::{Error, Result};

/// Gaussian clusters around random centres, rounded to two decimals.
pub fn blobs(n: usize, features: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..features).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        rows.push(centres[c].iter().map(|&m| round2(m + noise.sample(&mut rng))).collect());
        labels.push(c);
    }
    Dataset::new(rows, labels, classes).expect("generated data is valid")
}

/// Two features uniform on `[-1, 1]`; the label is the sign agreement.
pub fn xor(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let a = round2(rng.random_range(-1.0..1.0));
        let b = round2(rng.random_range(-1.0..1.0));
        labels.push(usize::from((a > 0.0) != (b > 0.0)));
        rows.push(vec![a, b]);
    }
    Dataset::new(rows, labels, 2).expect("generated data is valid")
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Adult,
    CreditApproval,
    DryBean,
    Letter,
    Wine,
}

#[derive(Debug, Clone, Copy)]
enum Column {
    /// Real-valued, rounded to `decimals`.
    Real { decimals: i32 },
    /// Integer in `0..=max`, class-dependent mean.
    Count { max: u32 },
    /// Category code in `0..levels`, class-dependent distribution.
    Category { levels: u32 },
}

impl Profile {
    pub const ALL: [Profile; 5] = [
        Profile::Adult,
        Profile::CreditApproval,
        Profile::DryBean,
        Profile::Letter,
        Profile::Wine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Adult => "adult",
            Profile::CreditApproval => "credit_approval",
            Profile::DryBean => "dry_bean",
            Profile::Letter => "letter",
            Profile::Wine => "wine",
        }
    }

    pub fn class_count(self) -> usize {
        match self {
            Profile::Adult | Profile::CreditApproval => 2,
            Profile::DryBean => 7,
            Profile::Letter => 26,
            Profile::Wine => 11,
        }
    }

    pub fn feature_count(self) -> usize {
        self.columns().len()
    }

    /// Instance count used by the benchmarks and the acceptance suite.
    pub fn desk_size(self) -> usize {
        match self {
            Profile::Adult => 4000,
            Profile::CreditApproval => 690,
            Profile::DryBean => 3000,
            Profile::Letter => 4000,
            Profile::Wine => 2000,
        }
    }

    /// Fraction of labels replaced by a random class.
    fn label_noise(self) -> f64 {
        match self {
            Profile::Adult => 0.15,
            Profile::CreditApproval => 0.12,
            Profile::DryBean => 0.06,
            Profile::Letter => 0.04,
            Profile::Wine => 0.10,
        }
    }

    /// Relative class frequencies; uniform when empty. Zero-weight classes never occur.
    fn class_prior(self) -> &'static [f64] {
        match self {
            Profile::Adult => &[0.76, 0.24],
            Profile::CreditApproval => &[0.56, 0.44],
            Profile::DryBean => &[0.26, 0.19, 0.15, 0.14, 0.12, 0.10, 0.04],
            Profile::Letter => &[],
            Profile::Wine => &[0.0, 0.0, 0.0, 0.004, 0.033, 0.297, 0.449, 0.18, 0.036, 0.001, 0.0],
        }
    }

    fn columns(self) -> Vec<Column> {
        use Column::*;
        match self {
            Profile::Adult => vec![
                Count { max: 90 },
                Category { levels: 8 },
                Real { decimals: 0 },
                Category { levels: 16 },
                Count { max: 16 },
                Category { levels: 7 },
                Category { levels: 14 },
                Category { levels: 6 },
                Category { levels: 5 },
                Category { levels: 2 },
                Count { max: 99999 },
                Count { max: 4356 },
                Count { max: 99 },
                Category { levels: 41 },
            ],
            Profile::CreditApproval => vec![
                Category { levels: 2 },
                Real { decimals: 2 },
                Real { decimals: 3 },
                Category { levels: 3 },
                Category { levels: 3 },
                Category { levels: 14 },
                Category { levels: 9 },
                Real { decimals: 3 },
                Category { levels: 2 },
                Category { levels: 2 },
                Count { max: 67 },
                Category { levels: 2 },
                Category { levels: 3 },
                Count { max: 2000 },
                Count { max: 100000 },
            ],
            Profile::DryBean => vec![Real { decimals: 4 }; 16],
            Profile::Letter => vec![Count { max: 15 }; 16],
            Profile::Wine => vec![
                Real { decimals: 1 },
                Real { decimals: 2 },
                Real { decimals: 2 },
                Real { decimals: 1 },
                Real { decimals: 3 },
                Count { max: 289 },
                Count { max: 440 },
                Real { decimals: 4 },
                Real { decimals: 2 },
                Real { decimals: 2 },
                Real { decimals: 1 },
            ],
        }
    }

    /// `n` instances; identical `(profile, n, seed)` give identical data.
    pub fn generate(self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let columns = self.columns();
        let k = self.class_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");

        // per class and column: a latent mean in [0, 1]; categories get a weight table
        let means: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..columns.len()).map(|_| rng.random_range(0.15..0.85)).collect())
            .collect();
        let category_weights: Vec<Vec<Vec<f64>>> = (0..k)
            .map(|_| {
                columns
                    .iter()
                    .map(|col| match col {
                        Column::Category { levels } => {
                            (0..*levels).map(|_| rng.random_range(0.05f64..1.0).powi(2)).collect()
                        }
                        _ => Vec::new(),
                    })
                    .collect()
            })
            .collect();

        let prior = self.class_prior();
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let class = if prior.is_empty() {
                rng.random_range(0..k)
            } else {
                pick_weighted(&mut rng, prior)
            };
            let row = columns
                .iter()
                .enumerate()
                .map(|(j, col)| {
                    let latent = (means[class][j] + 0.18 * unit.sample(&mut rng)).clamp(0.0, 1.0);
                    match *col {
                        Column::Real { decimals } => {
                            let scale = 10f64.powi(decimals);
                            (latent * 10.0 * scale).round() / scale
                        }
                        Column::Count { max } => (latent * f64::from(max)).round(),
                        Column::Category { .. } => pick_weighted(&mut rng, &category_weights[class][j]) as f64,
                    }
                })
                .collect();
            let label = if rng.random_bool(self.label_noise()) {
                rng.random_range(0..k)
            } else {
                class
            };
            rows.push(row);
            labels.push(label);
        }
        let names = (0..columns.len()).map(|j| format!("x{j}")).collect();
        let classes = (0..k).map(|c| format!("c{c}")).collect();
        Ok(Dataset::new(rows, labels, k)?.with_names(names, classes))
    }
}

fn pick_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset profile {s:?}")))
    }
}
