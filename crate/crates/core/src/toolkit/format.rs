//! Versioned JSON interchange for ensembles. Real numbers travel as decimal
//! strings written with Rust's shortest round-trip formatting, so a reload is
//! bit-exact. See docs/formats.md for the schema.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Aggregation, Ensemble, LeafValue, Node, NodeKind, NodeStats, TrainParams, Tree};
use crate::error::{Error, Result};
use crate::mapping::Layout;
use crate::pathspace::Condition;

pub const FORMAT_NAME: &str = "retention-ensemble";
pub const FORMAT_VERSION: u32 = 1;

/// A real number stored as a decimal string; plain JSON numbers are accepted on read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decimal {
    Text(String),
    Number(f64),
}

impl Decimal {
    pub fn new(v: f64) -> Self {
        Decimal::Text(format!("{v:?}"))
    }

    pub fn value(&self, context: &str) -> Result<f64> {
        match self {
            Decimal::Number(v) => Ok(*v),
            Decimal::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::format(context, format!("{s:?} is not a decimal number"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
    /// Leaf class for majority-vote models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    /// Leaf value for margin-sum models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purity: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeRecord {
    #[serde(default)]
    pub group: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub in_bag: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oob: Vec<usize>,
    pub nodes: Vec<NodeRecord>,
}

/// How the training rows were cut from the source CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitInfo {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleDocument {
    pub format: String,
    pub version: u32,
    /// `majority_vote` or `margin_sum`.
    pub aggregation: String,
    pub class_count: usize,
    pub feature_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_score: Option<Decimal>,
    /// Margin outputs; 1 for binary models, the class count for multi-class ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<TrainParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
    pub trees: Vec<TreeRecord>,
}

impl EnsembleDocument {
    pub fn from_ensemble(e: &Ensemble) -> Self {
        let (aggregation, base_score, groups) = match e.aggregation() {
            Aggregation::MajorityVote => ("majority_vote", None, None),
            Aggregation::MarginSum { base_score, groups } => {
                ("margin_sum", Some(Decimal::new(base_score)), Some(groups))
            }
        };
        let trees = e
            .trees()
            .iter()
            .map(|t| TreeRecord {
                group: t.group,
                in_bag: t.in_bag.clone(),
                oob: t.oob.clone(),
                nodes: t.nodes().iter().map(node_record).collect(),
            })
            .collect();
        Self {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            aggregation: aggregation.into(),
            class_count: e.class_count(),
            feature_count: e.feature_count(),
            base_score,
            groups,
            params: e.params().cloned(),
            split: None,
            trees,
        }
    }

    pub fn with_split(mut self, split: SplitInfo) -> Self {
        self.split = Some(split);
        self
    }

    pub fn to_ensemble(&self) -> Result<Ensemble> {
        if self.format != FORMAT_NAME {
            return Err(Error::format(
                "format",
                format!("expected {FORMAT_NAME:?}, found {:?}", self.format),
            ));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::format(
                "version",
                format!("unsupported schema version {}, expected {FORMAT_VERSION}", self.version),
            ));
        }
        let aggregation = match self.aggregation.as_str() {
            "majority_vote" => Aggregation::MajorityVote,
            "margin_sum" => Aggregation::MarginSum {
                base_score: match &self.base_score {
                    Some(d) => d.value("base_score")?,
                    None => 0.0,
                },
                groups: self.groups.unwrap_or(1),
            },
            other => {
                return Err(Error::format(
                    "aggregation",
                    format!("unknown aggregation mode {other:?}"),
                ))
            }
        };
        let margin = matches!(aggregation, Aggregation::MarginSum { .. });
        let trees = self
            .trees
            .iter()
            .enumerate()
            .map(|(t, rec)| {
                let nodes = rec
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(id, n)| parse_node(n, margin, &format!("trees[{t}].nodes[{id}]")))
                    .collect::<Result<Vec<_>>>()?;
                Tree::new(nodes, rec.in_bag.clone(), rec.oob.clone(), rec.group).map_err(|e| match e {
                    Error::Format { context, message } => Error::format(format!("trees[{t}]: {context}"), message),
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(
            trees,
            aggregation,
            self.class_count,
            self.feature_count,
            self.params.clone(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn node_record(n: &Node) -> NodeRecord {
    let mut rec = NodeRecord {
        feature: None,
        threshold: None,
        left: None,
        right: None,
        class: None,
        value: None,
        majority: n.stats.map(|s| s.majority_class),
        purity: n.stats.map(|s| Decimal::new(s.purity)),
        samples: n.stats.map(|s| s.sample_count),
    };
    match n.kind {
        NodeKind::Split { condition, left, right } => {
            rec.feature = Some(condition.feature);
            rec.threshold = Some(Decimal::new(condition.threshold));
            rec.left = Some(left);
            rec.right = Some(right);
        }
        NodeKind::Leaf(LeafValue::Class(c)) => rec.class = Some(c),
        NodeKind::Leaf(LeafValue::Value(v)) => rec.value = Some(Decimal::new(v)),
    }
    rec
}

fn parse_node(n: &NodeRecord, margin: bool, ctx: &str) -> Result<Node> {
    let kind = match (n.feature, &n.threshold, n.left, n.right) {
        (Some(feature), Some(t), Some(left), Some(right)) => {
            if n.class.is_some() || n.value.is_some() {
                return Err(Error::format(ctx, "split node carries a leaf payload"));
            }
            NodeKind::Split {
                condition: Condition::new(feature, t.value(&format!("{ctx}.threshold"))?),
                left,
                right,
            }
        }
        (None, None, None, None) => match (n.class, &n.value, margin) {
            (Some(c), None, false) => NodeKind::Leaf(LeafValue::Class(c)),
            (None, Some(v), true) => NodeKind::Leaf(LeafValue::Value(v.value(&format!("{ctx}.value"))?)),
            _ => {
                let want = if margin { "value" } else { "class" };
                return Err(Error::format(ctx, format!("leaf must carry exactly one `{want}`")));
            }
        },
        _ => {
            return Err(Error::format(
                ctx,
                "split nodes need feature, threshold, left and right",
            ))
        }
    };
    let stats = match (n.majority, &n.purity, n.samples) {
        (None, None, None) => None,
        (Some(majority_class), Some(p), samples) => Some(NodeStats {
            majority_class,
            purity: p.value(&format!("{ctx}.purity"))?,
            sample_count: samples.unwrap_or(0),
        }),
        _ => {
            return Err(Error::format(
                ctx,
                "purity annotation needs both `majority` and `purity`",
            ))
        }
    };
    Ok(Node { kind, stats })
}

pub fn save_document(doc: &EnsembleDocument, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer_pretty(&mut out, doc)?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_document(path: impl AsRef<Path>) -> Result<EnsembleDocument> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

pub fn save_ensemble(e: &Ensemble, path: impl AsRef<Path>) -> Result<()> {
    save_document(&EnsembleDocument::from_ensemble(e), path)
}

pub fn load_ensemble(path: impl AsRef<Path>) -> Result<Ensemble> {
    let path = path.as_ref();
    load_document(path)?.to_ensemble().map_err(|e| match e {
        Error::Format { context, message } => Error::format(format!("{}: {context}", path.display()), message),
        other => other,
    })
}

pub const LAYOUT_FORMAT_NAME: &str = "retention-layout";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutDocument {
    format: String,
    version: u32,
    layout: Layout,
}

pub fn save_layout(layout: &Layout, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let doc = LayoutDocument {
        format: LAYOUT_FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        layout: layout.clone(),
    };
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer(&mut out, &doc)?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_layout(path: impl AsRef<Path>) -> Result<Layout> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let doc: LayoutDocument =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(&ctx, e.to_string()))?;
    if doc.format != LAYOUT_FORMAT_NAME || doc.version != FORMAT_VERSION {
        return Err(Error::format(
            ctx,
            format!("unsupported layout document {:?} version {}", doc.format, doc.version),
        ));
    }
    Ok(doc.layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::blobs;
    use crate::ensemble::fixtures::t0_ensemble;
    use crate::ensemble::train_forest;
    use crate::pruning::purity_threshold_prune;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trained_forest_round_trips() {
        let data = blobs(120, 4, 3, 5);
        let e = train_forest(&data, &TrainParams::new(8, 5)).unwrap();
        let doc = EnsembleDocument::from_ensemble(&e);
        let back = EnsembleDocument::from_json(&doc.to_json().unwrap())
            .unwrap()
            .to_ensemble()
            .unwrap();
        assert_eq!(back, e);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert_eq!(back.predict(&x).unwrap(), e.predict(&x).unwrap());
        }
    }

    #[test]
    fn awkward_floats_are_bit_exact() {
        for v in [0.1 + 0.2, 1e-300, -2.5e17, f64::MIN_POSITIVE, 1.0 / 3.0, -0.0] {
            let d = Decimal::new(v);
            assert_eq!(d.value("x").unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn unannotated_document_is_not_prunable() {
        let e = t0_ensemble();
        let back = EnsembleDocument::from_ensemble(&e).to_ensemble().unwrap();
        assert!(!back.is_prunable());
        let data = blobs(10, 2, 3, 0);
        let err = purity_threshold_prune(&back, &data, 0.01).unwrap_err();
        assert_eq!(err.to_string(), "pruning requires bagging-trained ensemble");
    }

    #[test]
    fn schema_errors_carry_context() {
        let mut doc = EnsembleDocument::from_ensemble(&t0_ensemble());
        doc.version = 7;
        assert!(doc.to_ensemble().unwrap_err().to_string().contains("schema version 7"));
        doc.version = FORMAT_VERSION;
        doc.aggregation = "weighted".into();
        assert!(doc
            .to_ensemble()
            .unwrap_err()
            .to_string()
            .contains("unknown aggregation mode"));
        doc.aggregation = "majority_vote".into();
        doc.trees[0].nodes[2].threshold = Some(Decimal::Text("abc".into()));
        let msg = doc.to_ensemble().unwrap_err().to_string();
        assert!(msg.contains("trees[0].nodes[2].threshold"), "{msg}");
        doc.trees[0].nodes[2].threshold = None;
        assert!(doc.to_ensemble().unwrap_err().to_string().contains("trees[0].nodes[2]"));
        let bad = r#"{"format":"retention-ensemble","version":1,"aggregation":"majority_vote",
            "class_count":2,"feature_count":1,"trees":[{"nodes":[{"class":0,"colour":1}]}]}"#;
        assert!(EnsembleDocument::from_json(bad)
            .unwrap_err()
            .to_string()
            .contains("line 2"));
    }

    #[test]
    fn margin_document_reads_numbers_and_strings() {
        let text = r#"{"format":"retention-ensemble","version":1,"aggregation":"margin_sum",
            "class_count":2,"feature_count":1,"base_score":"0.5","groups":1,
            "trees":[{"nodes":[{"feature":0,"threshold":"1.5","left":1,"right":2},{"value":-0.3},{"value":"0.3"}]}]}"#;
        let e = EnsembleDocument::from_json(text).unwrap().to_ensemble().unwrap();
        let margin = |x: f64| match e.predict(&[x]).unwrap() {
            crate::ensemble::Prediction::Margin(m) => m[0],
            other => panic!("{other:?}"),
        };
        assert!((margin(1.0) - 0.2).abs() < 1e-15);
        assert!((margin(2.0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let e = t0_ensemble();
        save_ensemble(&e, &p).unwrap();
        assert_eq!(load_ensemble(&p).unwrap(), e);
        assert!(matches!(
            load_ensemble(dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn layouts_round_trip() {
        let paths = crate::pathspace::extract_paths(&crate::pathspace::fixtures::t1());
        let dir = tempfile::tempdir().unwrap();
        for strategy in crate::mapping::Strategy::ALL {
            let layout = crate::mapping::map(&paths, strategy, 4).unwrap();
            let p = dir.path().join(format!("{strategy}.json"));
            save_layout(&layout, &p).unwrap();
            assert_eq!(load_layout(&p).unwrap(), layout);
        }
    }
}
